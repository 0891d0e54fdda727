// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include "lqsgd/data.hpp"

#include <cmath>
#include <fstream>

#include "lqsgd/error.hpp"

namespace lqsgd {

Dataset make_blobs(std::size_t samples, std::size_t dim, int classes,
                   double center_spread, double noise, std::uint64_t center_seed,
                   std::uint64_t sample_seed) {
  if (classes < 1 || dim < 1) throw ConfigError("blobs need dim >= 1 and classes >= 1");
  SeededRng center_rng(center_seed);
  Matrix centers(static_cast<std::size_t>(classes), dim);
  const double center_sd = center_spread / std::sqrt(static_cast<double>(dim));
  for (double& v : centers.data()) v = center_sd * center_rng.normal();

  Dataset ds;
  ds.classes = classes;
  ds.features = Matrix(samples, dim);
  ds.labels.resize(samples);
  SeededRng rng(sample_seed);
  const double noise_sd = noise / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < samples; ++i) {
    int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    ds.labels[i] = label;
    for (std::size_t j = 0; j < dim; ++j) {
      ds.features(i, j) = centers(static_cast<std::size_t>(label), j) + noise_sd * rng.normal();
    }
  }
  return ds;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("truncated IDX file: " + path);
  return (std::uint32_t{buf[0]} << 24) | (std::uint32_t{buf[1]} << 16) |
         (std::uint32_t{buf[2]} << 8) | std::uint32_t{buf[3]};
}

}  // namespace

Dataset read_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::size_t max_samples) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path);

  if (read_be32(img, images_path) != 0x00000803u) {
    throw FormatError("bad IDX image magic in " + images_path);
  }
  if (read_be32(lab, labels_path) != 0x00000801u) {
    throw FormatError("bad IDX label magic in " + labels_path);
  }
  std::uint32_t n_images = read_be32(img, images_path);
  std::uint32_t rows = read_be32(img, images_path);
  std::uint32_t cols = read_be32(img, images_path);
  std::uint32_t n_labels = read_be32(lab, labels_path);
  if (n_images != n_labels) throw FormatError("IDX image/label count mismatch");

  const std::size_t keep = std::min<std::size_t>(n_images, max_samples);
  const std::size_t pixels = std::size_t{rows} * cols;

  Dataset ds;
  ds.classes = 10;
  ds.features = Matrix(keep, pixels);
  ds.labels.resize(keep);
  std::vector<unsigned char> buf(pixels);
  for (std::size_t i = 0; i < keep; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!img) throw IoError("truncated IDX image data: " + images_path);
    for (std::size_t j = 0; j < pixels; ++j) {
      ds.features(i, j) = static_cast<double>(buf[j]) / 255.0;
    }
    char c;
    lab.read(&c, 1);
    if (!lab) throw IoError("truncated IDX label data: " + labels_path);
    ds.labels[i] = static_cast<int>(static_cast<unsigned char>(c));
  }
  return ds;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  SeededRng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace lqsgd
