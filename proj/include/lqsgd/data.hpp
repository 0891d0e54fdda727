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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lqsgd/matrix.hpp"

namespace lqsgd {

struct Dataset {
  Matrix features;          // samples x dim
  std::vector<int> labels;  // one label per sample
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
};

/// Seeded Gaussian-blob classification data: class centers drawn from
/// center_seed, samples = center + noise drawn from sample_seed. Train and
/// test splits share center_seed and differ in sample_seed. Labels cycle
/// 0..classes-1 in sample order.
Dataset make_blobs(std::size_t samples, std::size_t dim, int classes,
                   double center_spread, double noise, std::uint64_t center_seed,
                   std::uint64_t sample_seed);
inline Dataset make_blobs(std::size_t samples, std::size_t dim, int classes,
                          double center_spread, double noise, std::uint64_t seed) {
  return make_blobs(samples, dim, classes, center_spread, noise, seed, seed + 1);
}

/// Reads the standard IDX image/label file pair (MNIST layout), keeping at
/// most max_samples images. Pixels are scaled to [0, 1].
Dataset read_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::size_t max_samples);

/// Fisher-Yates permutation of [0, n) driven by the project RNG.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace lqsgd
