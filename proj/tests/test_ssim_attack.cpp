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

#include <cmath>

#include "doctest.h"
#include "lqsgd/attack.hpp"
#include "lqsgd/ssim.hpp"

using namespace lqsgd;

namespace {

Matrix checkerboard(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m(i, j) = static_cast<double>((i + j) % 2);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("ssim identities") {
  Matrix img = synthetic_image(8, 8, 42);
  CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-12));

  Matrix other = synthetic_image(8, 8, 43);
  CHECK(std::fabs(ssim(img, other) - ssim(other, img)) <= 1e-12);

  CHECK_THROWS_AS(ssim(Matrix(4, 4), Matrix(5, 5)), ShapeError);
}

TEST_CASE("ssim of a checkerboard against its inverse is negative") {
  Matrix a = checkerboard(8);
  Matrix b = a;
  for (double& v : b.data()) v = 1.0 - v;
  double s = ssim(a, b);
  CHECK(s <= 0.0);

  // Direct single-window oracle: mu_a = mu_b = 0.5, var = 0.25, cov = -0.25.
  const double c1 = 1e-4, c2 = 9e-4;
  double expect = ((2 * 0.5 * 0.5 + c1) * (2 * -0.25 + c2)) /
                  ((0.5 * 0.5 + 0.5 * 0.5 + c1) * (0.25 + 0.25 + c2));
  CHECK(s == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("total variation of a constant image is zero") {
  Matrix flat(6, 6);
  for (double& v : flat.data()) v = 0.37;
  CHECK(total_variation(flat) == 0.0);
}

TEST_CASE("objective vanishes at the true input with the true gradient") {
  SoftmaxLinearModel model(16, 4);
  ParamSet params = model.init_params(7);
  Matrix image = synthetic_image(4, 4, 9);
  int label = 2;
  ParamSet observed = observed_gradients(model, params, image, label,
                                         CompressorSpec{.method = "identity"}, 1);
  double obj = inversion_objective(image, label, params, observed, model, 0.0);
  CHECK(std::fabs(obj) <= 1e-12);
}

TEST_CASE("analytic linear objective matches the cross-module recomputation") {
  SoftmaxLinearModel model(16, 5);
  ParamSet params = model.init_params(21);
  Matrix truth = synthetic_image(4, 4, 22);
  int label = 3;
  ParamSet observed = observed_gradients(
      model, params, truth, label, CompressorSpec{.method = "lqsgd", .rank = 1, .bits = 8}, 2);
  SeededRng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix x(4, 4);
    for (double& v : x.data()) v = rng.uniform();
    // Value: closed form vs the generic path through the model's gradient.
    double generic = inversion_objective(x, label, params, observed, model, 0.1);
    double analytic = linear_inversion_objective(model, params, observed, label, 0.1, x, nullptr);
    CHECK(std::fabs(generic - analytic) <= 1e-10);
    CHECK(generic >= 0.0);

    // Gradient: closed form vs central differences of the generic value
    // (tv_weight 0 keeps the objective differentiable).
    Matrix grad;
    linear_inversion_objective(model, params, observed, label, 0.0, x, &grad);
    const double h = 1e-6;
    for (std::size_t j : {std::size_t{0}, std::size_t{5}, std::size_t{15}}) {
      Matrix probe = x;
      probe.data()[j] = x.data()[j] + h;
      double plus = inversion_objective(probe, label, params, observed, model, 0.0);
      probe.data()[j] = x.data()[j] - h;
      double minus = inversion_objective(probe, label, params, observed, model, 0.0);
      double fd = (plus - minus) / (2.0 * h);
      CHECK(std::fabs(fd - grad.data()[j]) <=
            1e-5 * std::max({1.0, std::fabs(fd), std::fabs(grad.data()[j])}));
    }
  }
}

TEST_CASE("zero observed gradient gives the defined degenerate objective") {
  SoftmaxLinearModel model(16, 4);
  ParamSet params = model.init_params(3);
  Matrix image = synthetic_image(4, 4, 5);
  ParamSet observed = observed_gradients(model, params, image, 0,
                                         CompressorSpec{.method = "identity"}, 1);
  for (auto& layer : observed) {
    for (double& v : layer.tensor.data) v = 0.0;
  }
  double tv = total_variation(image);
  double obj = inversion_objective(image, 0, params, observed, model, 0.5);
  CHECK(obj == doctest::Approx(1.0 + 0.5 * tv).epsilon(1e-12));

  // The attack still runs and heads toward a TV-minimal image.
  AttackConfig cfg;
  cfg.steps = 200;
  cfg.restarts = 1;
  cfg.tv_weight = 0.5;
  cfg.seed = 77;
  cfg.height = 4;
  cfg.width = 4;
  AttackResult res = run_attack(observed, 0, model, params, image, cfg);
  CHECK(total_variation(res.reconstruction) <= 1.0);
}

TEST_CASE("linear attack recovers the input from the uncompressed gradient") {
  SoftmaxLinearModel model(64, 10);
  ParamSet params = model.init_params(31);
  Matrix truth = synthetic_image(8, 8, 32);
  int label = 4;

  // Recoverability oracle: gradient rows are s_c * x^T and the bias
  // gradient is s, so x = row_c / s_c for any class with s_c != 0.
  ParamSet observed = observed_gradients(model, params, truth, label,
                                         CompressorSpec{.method = "identity"}, 3);
  const auto& gw = observed[0].tensor.data;
  const auto& gb = observed[1].tensor.data;
  std::size_t best_c = 0;
  for (std::size_t c = 1; c < gb.size(); ++c) {
    if (std::fabs(gb[c]) > std::fabs(gb[best_c])) best_c = c;
  }
  Matrix oracle(8, 8);
  for (std::size_t j = 0; j < 64; ++j) {
    oracle.data()[j] = gw[best_c * 64 + j] / gb[best_c];
  }
  CHECK(ssim(oracle, truth) >= doctest::Approx(0.999));

  AttackConfig cfg;
  cfg.steps = 2000;
  cfg.restarts = 3;
  cfg.seed = 55;
  cfg.height = 8;
  cfg.width = 8;
  AttackResult res = run_attack(observed, label, model, params, truth, cfg);
  CHECK(res.ssim >= 0.95);
  CHECK(res.objective <= 1e-6);
}

TEST_CASE("attack is deterministic") {
  SoftmaxLinearModel model(16, 4);
  ParamSet params = model.init_params(3);
  Matrix truth = synthetic_image(4, 4, 4);
  ParamSet observed = observed_gradients(
      model, params, truth, 1, CompressorSpec{.method = "lqsgd", .rank = 1, .bits = 8}, 5);
  AttackConfig cfg;
  cfg.steps = 100;
  cfg.restarts = 2;
  cfg.seed = 9;
  cfg.height = 4;
  cfg.width = 4;
  AttackResult a = run_attack(observed, 1, model, params, truth, cfg);
  AttackResult b = run_attack(observed, 1, model, params, truth, cfg);
  CHECK(a.reconstruction == b.reconstruction);
  CHECK(a.objective == b.objective);
}

TEST_CASE("mlp finite-difference attack respects the pixel cap") {
  MlpModel model(64, 8, 4);
  ParamSet params = model.init_params(2);
  Matrix truth = synthetic_image(8, 8, 6);
  ParamSet observed = observed_gradients(model, params, truth, 2,
                                         CompressorSpec{.method = "identity"}, 7);
  AttackConfig cfg;
  cfg.steps = 30;
  cfg.restarts = 1;
  cfg.seed = 11;
  cfg.height = 8;
  cfg.width = 8;
  AttackResult res = run_attack(observed, 2, model, params, truth, cfg);
  CHECK(std::isfinite(res.objective));
  CHECK(res.objective >= 0.0);

  MlpModel big(20 * 20, 8, 4);
  ParamSet big_params = big.init_params(2);
  Matrix big_truth = synthetic_image(20, 20, 6);
  ParamSet big_obs = observed_gradients(big, big_params, big_truth, 1,
                                        CompressorSpec{.method = "identity"}, 8);
  AttackConfig big_cfg = cfg;
  big_cfg.height = 20;
  big_cfg.width = 20;
  CHECK_THROWS_AS(run_attack(big_obs, 1, big, big_params, big_truth, big_cfg), ConfigError);
}

TEST_CASE("descent is monotone") {
  SoftmaxLinearModel model(64, 10);
  ParamSet params = model.init_params(41);
  Matrix truth = synthetic_image(8, 8, 42);
  ParamSet observed = observed_gradients(model, params, truth, 5,
                                         CompressorSpec{.method = "identity"}, 9);
  // Objectives at increasing step budgets never get worse.
  double prev = 1e300;
  for (int steps : {5, 25, 100, 400}) {
    AttackConfig cfg;
    cfg.steps = steps;
    cfg.restarts = 1;
    cfg.seed = 12;
    cfg.height = 8;
    cfg.width = 8;
    AttackResult res = run_attack(observed, 5, model, params, truth, cfg);
    CHECK(res.objective <= prev + 1e-15);
    prev = res.objective;
  }
}
