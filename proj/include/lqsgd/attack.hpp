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

#include "lqsgd/models.hpp"
#include "lqsgd/train.hpp"

namespace lqsgd {

struct AttackConfig {
  int steps = 600;          // outer descent iterations per restart
  double step_size = 0.5;   // initial step; backtracking halves on failure
  double tv_weight = 0.0;   // lambda of the total-variation regularizer
  int restarts = 3;
  std::uint64_t seed = 1;
  std::size_t height = 8;
  std::size_t width = 8;
};

struct AttackResult {
  Matrix reconstruction;  // clamped to [0, 1]
  double objective = 0.0;
  double ssim = 0.0;      // versus the reference image
};

/// Anisotropic total variation: sum of absolute horizontal and vertical
/// neighbor differences.
double total_variation(const Matrix& image);

/// Gradient-matching objective: 1 - cos(grad_w L(f(x; w), y), observed)
/// + tv_weight * TV(x), with all layer gradients flattened into one vector
/// for the cosine. A zero-norm gradient on either side yields a defined
/// value of 1 + tv_weight * TV(x).
double inversion_objective(const Matrix& image, int label, const ParamSet& model_params,
                           const ParamSet& observed, const Model& model, double tv_weight);

/// Minimizes the objective over the image by projected gradient descent
/// with backtracking line search, best of cfg.restarts restarts. The
/// softmax-linear model uses the closed-form objective gradient; any other
/// model falls back to central finite differences over pixels, capped at
/// 16x16 images (ConfigError beyond). Deterministic given cfg.seed.
AttackResult run_attack(const ParamSet& observed, int label, const Model& model,
                        const ParamSet& model_params, const Matrix& reference,
                        const AttackConfig& cfg);

/// Closed-form objective for the softmax-linear model, with the gradient in
/// the image written to grad_out when non-null. Equals inversion_objective
/// on that model; exposed so the derivative can be checked independently.
double linear_inversion_objective(const SoftmaxLinearModel& model, const ParamSet& params,
                                  const ParamSet& observed, int label, double tv_weight,
                                  const Matrix& image, Matrix* grad_out);

/// What an honest-but-curious aggregator sees: the compressed message of a
/// fresh single-sample gradient, decoded. Pass-through layers arrive dense.
ParamSet observed_gradients(const Model& model, const ParamSet& params, const Matrix& image,
                            int label, const CompressorSpec& spec, std::uint64_t master_seed);

/// Smooth seeded test image (random Gaussian bumps normalized to [0, 1]).
Matrix synthetic_image(std::size_t height, std::size_t width, std::uint64_t seed);

}  // namespace lqsgd
