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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lqsgd/compressor.hpp"
#include "lqsgd/data.hpp"

namespace lqsgd {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamSet = std::vector<NamedTensor>;

/// Desk-scale model zoo with hand-written analytic gradients. All gradients
/// are batch means; sample order inside a batch is preserved, so results
/// are deterministic.
class Model {
 public:
  virtual ~Model() = default;
  virtual const char* name() const = 0;
  virtual ParamSet init_params(std::uint64_t seed) const = 0;
  virtual double loss(const ParamSet& params, const Dataset& ds,
                      std::span<const std::size_t> batch) const = 0;
  virtual ParamSet gradient(const ParamSet& params, const Dataset& ds,
                            std::span<const std::size_t> batch) const = 0;
  virtual double accuracy(const ParamSet& params, const Dataset& ds) const = 0;
};

/// 0.5 * ||W - W*||_F^2; the gradient is W - W*, independent of the data.
class QuadraticModel final : public Model {
 public:
  QuadraticModel(std::size_t rows, std::size_t cols, std::uint64_t target_seed);
  const char* name() const override { return "quadratic"; }
  ParamSet init_params(std::uint64_t seed) const override;
  double loss(const ParamSet& params, const Dataset& ds,
              std::span<const std::size_t> batch) const override;
  ParamSet gradient(const ParamSet& params, const Dataset& ds,
                    std::span<const std::size_t> batch) const override;
  double accuracy(const ParamSet& params, const Dataset& ds) const override;

  const Matrix& target() const { return target_; }

 private:
  Matrix target_;
};

/// Binary logistic regression: sigma(w.x + b) with log loss.
class LogisticModel final : public Model {
 public:
  explicit LogisticModel(std::size_t input_dim);
  const char* name() const override { return "logistic"; }
  ParamSet init_params(std::uint64_t seed) const override;
  double loss(const ParamSet& params, const Dataset& ds,
              std::span<const std::size_t> batch) const override;
  ParamSet gradient(const ParamSet& params, const Dataset& ds,
                    std::span<const std::size_t> batch) const override;
  double accuracy(const ParamSet& params, const Dataset& ds) const override;

 private:
  std::size_t input_dim_;
};

/// One-hidden-layer tanh MLP with softmax cross-entropy output,
/// input_dim -> hidden -> classes. Backprop is hand-derived.
class MlpModel final : public Model {
 public:
  MlpModel(std::size_t input_dim, std::size_t hidden, int classes);
  const char* name() const override { return "mlp"; }
  ParamSet init_params(std::uint64_t seed) const override;
  double loss(const ParamSet& params, const Dataset& ds,
              std::span<const std::size_t> batch) const override;
  ParamSet gradient(const ParamSet& params, const Dataset& ds,
                    std::span<const std::size_t> batch) const override;
  double accuracy(const ParamSet& params, const Dataset& ds) const override;

 private:
  std::size_t input_dim_;
  std::size_t hidden_;
  int classes_;
};

/// Linear softmax classifier z = Wx + b. The per-sample weight gradient is
/// the rank-one outer product (p - e_y) x^T, which is what makes this the
/// reference model for gradient inversion studies.
class SoftmaxLinearModel final : public Model {
 public:
  SoftmaxLinearModel(std::size_t input_dim, int classes);
  const char* name() const override { return "softmax_linear"; }
  ParamSet init_params(std::uint64_t seed) const override;
  double loss(const ParamSet& params, const Dataset& ds,
              std::span<const std::size_t> batch) const override;
  ParamSet gradient(const ParamSet& params, const Dataset& ds,
                    std::span<const std::size_t> batch) const override;
  double accuracy(const ParamSet& params, const Dataset& ds) const override;

  std::size_t input_dim() const { return input_dim_; }
  int classes() const { return classes_; }

 private:
  std::size_t input_dim_;
  int classes_;
};

/// Numerically stable in-place softmax.
void softmax_inplace(std::span<double> z);

/// Central finite difference of the batch loss along one parameter
/// coordinate; the independent oracle for every analytic gradient.
double finite_difference_grad(const Model& model, const ParamSet& params, const Dataset& ds,
                              std::span<const std::size_t> batch, std::size_t tensor_index,
                              std::size_t coord, double step);

}  // namespace lqsgd
