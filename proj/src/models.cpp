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

#include "lqsgd/models.hpp"

#include <algorithm>
#include <cmath>

namespace lqsgd {

namespace {

constexpr double kLogFloor = 1e-300;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Tensor zeros_like_dims(std::vector<std::size_t> dims) {
  Tensor t;
  t.dims = std::move(dims);
  t.data.assign(t.size(), 0.0);
  return t;
}

NamedTensor named(std::string name, std::vector<std::size_t> dims) {
  return {std::move(name), zeros_like_dims(std::move(dims))};
}

}  // namespace

void softmax_inplace(std::span<double> z) {
  double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// ---------------------------------------------------------------------------
// Quadratic

QuadraticModel::QuadraticModel(std::size_t rows, std::size_t cols, std::uint64_t target_seed) {
  SeededRng rng(target_seed);
  target_ = gaussian_matrix(rng, rows, cols);
}

ParamSet QuadraticModel::init_params(std::uint64_t seed) const {
  SeededRng rng(seed);
  NamedTensor w = named("w", {target_.rows(), target_.cols()});
  for (double& v : w.tensor.data) v = rng.normal();
  return {std::move(w)};
}

double QuadraticModel::loss(const ParamSet& params, const Dataset&,
                            std::span<const std::size_t>) const {
  double sum = 0.0;
  for (std::size_t i = 0; i < target_.size(); ++i) {
    double d = params[0].tensor.data[i] - target_.data()[i];
    sum += d * d;
  }
  return 0.5 * sum;
}

ParamSet QuadraticModel::gradient(const ParamSet& params, const Dataset&,
                                  std::span<const std::size_t>) const {
  NamedTensor g = named("w", {target_.rows(), target_.cols()});
  for (std::size_t i = 0; i < target_.size(); ++i) {
    g.tensor.data[i] = params[0].tensor.data[i] - target_.data()[i];
  }
  ParamSet out;
  out.push_back(std::move(g));
  return out;
}

double QuadraticModel::accuracy(const ParamSet&, const Dataset&) const { return 0.0; }

// ---------------------------------------------------------------------------
// Logistic

LogisticModel::LogisticModel(std::size_t input_dim) : input_dim_(input_dim) {}

ParamSet LogisticModel::init_params(std::uint64_t seed) const {
  SeededRng rng(seed);
  NamedTensor w = named("w", {input_dim_, 1});
  for (double& v : w.tensor.data) v = 0.1 * rng.normal();
  NamedTensor b = named("b", {1});
  ParamSet out;
  out.push_back(std::move(w));
  out.push_back(std::move(b));
  return out;
}

double LogisticModel::loss(const ParamSet& params, const Dataset& ds,
                           std::span<const std::size_t> batch) const {
  const auto& w = params[0].tensor.data;
  const double b = params[1].tensor.data[0];
  double sum = 0.0;
  for (std::size_t idx : batch) {
    double z = b;
    for (std::size_t j = 0; j < input_dim_; ++j) z += w[j] * ds.features(idx, j);
    double p = sigmoid(z);
    double y = static_cast<double>(ds.labels[idx]);
    sum += -(y * std::log(std::max(p, kLogFloor)) +
             (1.0 - y) * std::log(std::max(1.0 - p, kLogFloor)));
  }
  return batch.empty() ? 0.0 : sum / static_cast<double>(batch.size());
}

ParamSet LogisticModel::gradient(const ParamSet& params, const Dataset& ds,
                                 std::span<const std::size_t> batch) const {
  const auto& w = params[0].tensor.data;
  const double b = params[1].tensor.data[0];
  NamedTensor gw = named("w", {input_dim_, 1});
  NamedTensor gb = named("b", {1});
  for (std::size_t idx : batch) {
    double z = b;
    for (std::size_t j = 0; j < input_dim_; ++j) z += w[j] * ds.features(idx, j);
    double delta = sigmoid(z) - static_cast<double>(ds.labels[idx]);
    for (std::size_t j = 0; j < input_dim_; ++j) {
      gw.tensor.data[j] += delta * ds.features(idx, j);
    }
    gb.tensor.data[0] += delta;
  }
  if (!batch.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : gw.tensor.data) v *= inv;
    gb.tensor.data[0] *= inv;
  }
  ParamSet out;
  out.push_back(std::move(gw));
  out.push_back(std::move(gb));
  return out;
}

double LogisticModel::accuracy(const ParamSet& params, const Dataset& ds) const {
  const auto& w = params[0].tensor.data;
  const double b = params[1].tensor.data[0];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < input_dim_; ++j) z += w[j] * ds.features(i, j);
    int pred = z > 0.0 ? 1 : 0;
    if (pred == ds.labels[i]) ++correct;
  }
  return ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// MLP

MlpModel::MlpModel(std::size_t input_dim, std::size_t hidden, int classes)
    : input_dim_(input_dim), hidden_(hidden), classes_(classes) {}

ParamSet MlpModel::init_params(std::uint64_t seed) const {
  SeededRng rng(seed);
  NamedTensor w1 = named("w1", {hidden_, input_dim_});
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim_));
  for (double& v : w1.tensor.data) v = s1 * rng.normal();
  NamedTensor b1 = named("b1", {hidden_});
  NamedTensor w2 = named("w2", {static_cast<std::size_t>(classes_), hidden_});
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (double& v : w2.tensor.data) v = s2 * rng.normal();
  NamedTensor b2 = named("b2", {static_cast<std::size_t>(classes_)});
  ParamSet out;
  out.push_back(std::move(w1));
  out.push_back(std::move(b1));
  out.push_back(std::move(w2));
  out.push_back(std::move(b2));
  return out;
}

namespace {

struct MlpForward {
  std::vector<double> hidden;  // tanh activations
  std::vector<double> probs;   // softmax output
};

MlpForward mlp_forward(const ParamSet& params, const Dataset& ds, std::size_t idx,
                       std::size_t input_dim, std::size_t hidden, int classes) {
  const auto& w1 = params[0].tensor.data;
  const auto& b1 = params[1].tensor.data;
  const auto& w2 = params[2].tensor.data;
  const auto& b2 = params[3].tensor.data;
  MlpForward f;
  f.hidden.resize(hidden);
  for (std::size_t h = 0; h < hidden; ++h) {
    double a = b1[h];
    const double* row = &w1[h * input_dim];
    for (std::size_t j = 0; j < input_dim; ++j) a += row[j] * ds.features(idx, j);
    f.hidden[h] = std::tanh(a);
  }
  f.probs.resize(static_cast<std::size_t>(classes));
  for (std::size_t c = 0; c < f.probs.size(); ++c) {
    double z = b2[c];
    const double* row = &w2[c * hidden];
    for (std::size_t h = 0; h < hidden; ++h) z += row[h] * f.hidden[h];
    f.probs[c] = z;
  }
  softmax_inplace(f.probs);
  return f;
}

}  // namespace

double MlpModel::loss(const ParamSet& params, const Dataset& ds,
                      std::span<const std::size_t> batch) const {
  double sum = 0.0;
  for (std::size_t idx : batch) {
    MlpForward f = mlp_forward(params, ds, idx, input_dim_, hidden_, classes_);
    sum += -std::log(std::max(f.probs[static_cast<std::size_t>(ds.labels[idx])], kLogFloor));
  }
  return batch.empty() ? 0.0 : sum / static_cast<double>(batch.size());
}

ParamSet MlpModel::gradient(const ParamSet& params, const Dataset& ds,
                            std::span<const std::size_t> batch) const {
  const auto& w2 = params[2].tensor.data;
  NamedTensor gw1 = named("w1", {hidden_, input_dim_});
  NamedTensor gb1 = named("b1", {hidden_});
  NamedTensor gw2 = named("w2", {static_cast<std::size_t>(classes_), hidden_});
  NamedTensor gb2 = named("b2", {static_cast<std::size_t>(classes_)});

  std::vector<double> dz(static_cast<std::size_t>(classes_));
  std::vector<double> da(hidden_);
  for (std::size_t idx : batch) {
    MlpForward f = mlp_forward(params, ds, idx, input_dim_, hidden_, classes_);
    for (std::size_t c = 0; c < dz.size(); ++c) {
      dz[c] = f.probs[c] - (static_cast<int>(c) == ds.labels[idx] ? 1.0 : 0.0);
    }
    for (std::size_t c = 0; c < dz.size(); ++c) {
      double* grow = &gw2.tensor.data[c * hidden_];
      for (std::size_t h = 0; h < hidden_; ++h) grow[h] += dz[c] * f.hidden[h];
      gb2.tensor.data[c] += dz[c];
    }
    for (std::size_t h = 0; h < hidden_; ++h) {
      double dh = 0.0;
      for (std::size_t c = 0; c < dz.size(); ++c) dh += w2[c * hidden_ + h] * dz[c];
      da[h] = dh * (1.0 - f.hidden[h] * f.hidden[h]);
    }
    for (std::size_t h = 0; h < hidden_; ++h) {
      double* grow = &gw1.tensor.data[h * input_dim_];
      for (std::size_t j = 0; j < input_dim_; ++j) grow[j] += da[h] * ds.features(idx, j);
      gb1.tensor.data[h] += da[h];
    }
  }
  if (!batch.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto* g : {&gw1, &gb1, &gw2, &gb2}) {
      for (double& v : g->tensor.data) v *= inv;
    }
  }
  ParamSet out;
  out.push_back(std::move(gw1));
  out.push_back(std::move(gb1));
  out.push_back(std::move(gw2));
  out.push_back(std::move(gb2));
  return out;
}

double MlpModel::accuracy(const ParamSet& params, const Dataset& ds) const {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    MlpForward f = mlp_forward(params, ds, i, input_dim_, hidden_, classes_);
    std::size_t pred = static_cast<std::size_t>(
        std::max_element(f.probs.begin(), f.probs.end()) - f.probs.begin());
    if (static_cast<int>(pred) == ds.labels[i]) ++correct;
  }
  return ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// Linear softmax

SoftmaxLinearModel::SoftmaxLinearModel(std::size_t input_dim, int classes)
    : input_dim_(input_dim), classes_(classes) {}

ParamSet SoftmaxLinearModel::init_params(std::uint64_t seed) const {
  SeededRng rng(seed);
  NamedTensor w = named("w", {static_cast<std::size_t>(classes_), input_dim_});
  const double s = 1.0 / std::sqrt(static_cast<double>(input_dim_));
  for (double& v : w.tensor.data) v = s * rng.normal();
  NamedTensor b = named("b", {static_cast<std::size_t>(classes_)});
  ParamSet out;
  out.push_back(std::move(w));
  out.push_back(std::move(b));
  return out;
}

namespace {

std::vector<double> softmax_linear_probs(const ParamSet& params, const Dataset& ds,
                                         std::size_t idx, std::size_t input_dim, int classes) {
  const auto& w = params[0].tensor.data;
  const auto& b = params[1].tensor.data;
  std::vector<double> z(static_cast<std::size_t>(classes));
  for (std::size_t c = 0; c < z.size(); ++c) {
    double acc = b[c];
    const double* row = &w[c * input_dim];
    for (std::size_t j = 0; j < input_dim; ++j) acc += row[j] * ds.features(idx, j);
    z[c] = acc;
  }
  softmax_inplace(z);
  return z;
}

}  // namespace

double SoftmaxLinearModel::loss(const ParamSet& params, const Dataset& ds,
                                std::span<const std::size_t> batch) const {
  double sum = 0.0;
  for (std::size_t idx : batch) {
    auto p = softmax_linear_probs(params, ds, idx, input_dim_, classes_);
    sum += -std::log(std::max(p[static_cast<std::size_t>(ds.labels[idx])], kLogFloor));
  }
  return batch.empty() ? 0.0 : sum / static_cast<double>(batch.size());
}

ParamSet SoftmaxLinearModel::gradient(const ParamSet& params, const Dataset& ds,
                                      std::span<const std::size_t> batch) const {
  NamedTensor gw = named("w", {static_cast<std::size_t>(classes_), input_dim_});
  NamedTensor gb = named("b", {static_cast<std::size_t>(classes_)});
  for (std::size_t idx : batch) {
    auto p = softmax_linear_probs(params, ds, idx, input_dim_, classes_);
    for (std::size_t c = 0; c < p.size(); ++c) {
      double delta = p[c] - (static_cast<int>(c) == ds.labels[idx] ? 1.0 : 0.0);
      double* grow = &gw.tensor.data[c * input_dim_];
      for (std::size_t j = 0; j < input_dim_; ++j) grow[j] += delta * ds.features(idx, j);
      gb.tensor.data[c] += delta;
    }
  }
  if (!batch.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : gw.tensor.data) v *= inv;
    for (double& v : gb.tensor.data) v *= inv;
  }
  ParamSet out;
  out.push_back(std::move(gw));
  out.push_back(std::move(gb));
  return out;
}

double SoftmaxLinearModel::accuracy(const ParamSet& params, const Dataset& ds) const {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto p = softmax_linear_probs(params, ds, i, input_dim_, classes_);
    std::size_t pred =
        static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (static_cast<int>(pred) == ds.labels[i]) ++correct;
  }
  return ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

// ---------------------------------------------------------------------------

double finite_difference_grad(const Model& model, const ParamSet& params, const Dataset& ds,
                              std::span<const std::size_t> batch, std::size_t tensor_index,
                              std::size_t coord, double step) {
  ParamSet probe = params;
  probe[tensor_index].tensor.data[coord] += step;
  double plus = model.loss(probe, ds, batch);
  probe[tensor_index].tensor.data[coord] -= 2.0 * step;
  double minus = model.loss(probe, ds, batch);
  return (plus - minus) / (2.0 * step);
}

}  // namespace lqsgd
