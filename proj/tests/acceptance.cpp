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
//
// Acceptance suite. Each check prints one PASS/FAIL line; run with
// `lqsgd_acceptance` for all checks or `lqsgd_acceptance --only N` for one.
//
// Checks 2 and 7 are expected to fail and are kept failing on purpose:
//   - check 2 asserts a per-entry round-trip bound that only covers the
//     bottom quantization bin; the codec's true worst case is the top bin,
//     larger by a factor of about (1+alpha)^(1-delta/2). The suite measures
//     and prints that factor.
//   - check 7 asserts that error feedback helps at b=2. With one magnitude
//     bit and per-block max-abs scaling the dequantized factors overshoot
//     (every kept entry decodes to +-scale), the low-rank reconstruction is
//     not a contraction, and error feedback amplifies the overshoot instead
//     of repairing it. Error feedback wins decisively from b=3 upward,
//     which the suite also measures and prints.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lqsgd/experiment.hpp"
#include "lqsgd/ssim.hpp"

using namespace lqsgd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

Matrix run_cycle(const Compressor& comp, const Matrix& g, CompressorState& state) {
  CompressedMessage msg = comp.compress(g, state);
  CompressedMessage agg = comp.aggregate(std::span<const CompressedMessage>(&msg, 1));
  return comp.finalize(g, agg, state);
}

// --------------------------------------------------------------------------
// 1. Communication cost model: 512x512 layer, r=1, b=8. Payload of the
// message pair is exactly (512+512)*8 bits; the ratio against 32-bit
// factors of the same rank is exactly 4.0; metadata overhead is < 1% of
// the dense transfer the message replaces.

Outcome check_cost_model() {
  SeededRng rng(1);
  Matrix g = gaussian_matrix(rng, 512, 512);
  auto comp = make_lqsgd(1, 8, 1.0, 2);
  CompressorState state = comp->make_state(512, 512, 0);
  CompressedMessage msg = comp->compress(g, state);

  const std::vector<std::uint8_t> bytes = serialize(msg);
  const WireSize ws = message_wire_size(msg);
  const std::uint64_t measured_payload = bytes.size() * 8 - ws.metadata_bits;
  const std::uint64_t want_payload = (512 + 512) * 8;

  const std::uint64_t float32_factors = (512 + 512) * 32;
  const double ratio = double(float32_factors) / double(measured_payload);

  const std::uint64_t dense_bits = 32ull * 512 * 512;
  const double metadata_frac = double(ws.metadata_bits) / double(dense_bits);

  bool pass = measured_payload == want_payload && ratio == 4.0 && metadata_frac < 0.01;
  return {pass, fmt("payload %llu bits (want %llu), ratio %.1f, metadata %llu bits = %.4f%% of dense",
                    (unsigned long long)measured_payload, (unsigned long long)want_payload,
                    ratio, (unsigned long long)ws.metadata_bits, 100.0 * metadata_frac)};
}

// --------------------------------------------------------------------------
// 2. Quantizer round-trip bound: b in {4,8}, alpha in {0.5,1,10}, 1e5
// uniform entries, every per-entry error <= scale*((1+a)^(d/2)-1)/a.

Outcome check_roundtrip_bound() {
  std::uint64_t violations = 0;
  std::uint64_t total = 0;
  double worst_factor = 0.0;
  for (int bits : {4, 8}) {
    for (double alpha : {0.5, 1.0, 10.0}) {
      SeededRng rng(derive_seed(2024, purpose_tag("c2"), bits * 100 + int(alpha * 10)));
      Matrix m(250, 400);  // 1e5 entries
      for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
      QuantConfig cfg = QuantConfig::packed(bits, alpha);
      QuantizedBlock blk = log_quantize(m, cfg);
      Matrix back = log_dequantize(blk);
      const double delta = 1.0 / (double(std::int64_t{1} << (bits - 1)) - 1.0);
      const double bound = blk.scale * (std::pow(1.0 + alpha, delta / 2.0) - 1.0) / alpha;
      for (std::size_t i = 0; i < m.size(); ++i) {
        double err = std::fabs(back.data()[i] - m.data()[i]);
        ++total;
        if (err > bound) {
          ++violations;
          worst_factor = std::max(worst_factor, err / bound);
        }
      }
    }
  }
  return {violations == 0,
          fmt("%llu violations out of %llu entries; worst error = %.2f x bound "
              "(bound only covers the bottom bin)",
              (unsigned long long)violations, (unsigned long long)total, worst_factor)};
}

// --------------------------------------------------------------------------
// 3. Power-iteration exactness: rank-1 16x12, r=1, lossless factors,
// relative Frobenius error <= 1e-8 over 100 seeds.

Outcome check_power_iteration() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    SeededRng rng(derive_seed(7, purpose_tag("c3"), seed));
    Matrix u = gaussian_matrix(rng, 16, 1);
    Matrix v = gaussian_matrix(rng, 12, 1);
    Matrix g = matmul(u, transpose(v));
    auto comp = make_lossless_lowrank(1, seed);
    CompressorState state = comp->make_state(16, 12, 0);
    Matrix ghat = run_cycle(*comp, g, state);
    Matrix diff = ghat;
    diff -= g;
    worst = std::max(worst, frobenius_norm(diff) / frobenius_norm(g));
  }
  return {worst <= 1e-8, fmt("worst relative error %.3e over 100 seeds (tol 1e-8)", worst)};
}

// --------------------------------------------------------------------------
// 4. Error-feedback conservation: g + E_prev == Ghat + E_new within 1e-12
// per entry, every step and layer, every compressor, 50 steps of an MLP run.

Outcome check_ef_conservation() {
  Task task = make_task("mlp_blobs", 11);
  const Model& model = *task.model;
  double worst = 0.0;
  const char* methods[] = {"identity", "topk", "powersgd", "lqsgd"};
  for (const char* method : methods) {
    CompressorSpec spec;
    spec.method = method;
    spec.rank = 1;
    spec.bits = 8;
    spec.k_fraction = 0.05;
    auto comp = make_compressor(spec, 11);

    ParamSet params = model.init_params(derive_seed(11, purpose_tag("init")));
    std::vector<LayerShape> shapes;
    std::vector<CompressorState> states;
    for (const auto& p : params) {
      auto [m, s] = reshape_to_matrix(p.tensor);
      shapes.push_back(s);
      states.push_back(comp->make_state(s.rows, s.cols, shapes.size() - 1));
    }
    const auto order = shuffled_indices(task.train_data.size(), derive_seed(11, purpose_tag("shuffle")));
    for (int step = 0; step < 50; ++step) {
      std::vector<std::size_t> batch(order.begin() + step * 32, order.begin() + step * 32 + 32);
      ParamSet grads = model.gradient(params, task.train_data, batch);
      for (std::size_t l = 0; l < grads.size(); ++l) {
        auto [gmat, shape] = reshape_to_matrix(grads[l].tensor);
        Matrix ghat;
        if (shape.pass_through) {
          ghat = gmat;
        } else {
          Matrix e_prev = states[l].error;
          CompressedMessage msg = comp->compress(gmat, states[l]);
          CompressedMessage agg = comp->aggregate(std::span<const CompressedMessage>(&msg, 1));
          ghat = comp->finalize(gmat, agg, states[l]);
          // Top-k charges its error against its own message; low-rank and
          // identity against the shared reconstruction. With one worker the
          // two coincide: check the identity against what was applied.
          Matrix used = spec.method == std::string("topk") ? decode(msg) : ghat;
          for (std::size_t i = 0; i < gmat.size(); ++i) {
            double lhs = gmat.data()[i] + e_prev.data()[i];
            double rhs = used.data()[i] + states[l].error.data()[i];
            worst = std::max(worst, std::fabs(lhs - rhs));
          }
        }
        auto& values = params[l].tensor.data;
        for (std::size_t i = 0; i < values.size(); ++i) {
          values[i] -= 0.05 * ghat.data()[i];
        }
      }
    }
  }
  return {worst <= 1e-12, fmt("worst per-entry identity violation %.3e (tol 1e-12)", worst)};
}

// --------------------------------------------------------------------------
// 5. Distributed == serial: identity compressor, 4 workers vs serial with
// the equivalent batch, parameter trajectories within 1e-10 over >= 100
// steps (sampled at epoch boundaries: 32, 64, 128 steps).

Outcome check_distributed_serial() {
  double worst = 0.0;
  for (int epochs : {1, 2, 4}) {
    Task task = make_task("mlp_blobs", 29);
    TrainConfig cfg;
    cfg.workers = 4;
    cfg.epochs = epochs;
    cfg.batch = 16;
    cfg.lr = 0.1;
    cfg.master_seed = 29;
    cfg.compressor.method = "identity";
    TrainingReport report = train(task, cfg);
    ParamSet serial = serial_sgd_reference(task, epochs, 64, 0.1, 29);
    for (std::size_t l = 0; l < serial.size(); ++l) {
      for (std::size_t i = 0; i < serial[l].tensor.data.size(); ++i) {
        worst = std::max(worst, std::fabs(report.final_params[l].tensor.data[i] -
                                          serial[l].tensor.data[i]));
      }
    }
  }
  return {worst <= 1e-10, fmt("worst parameter gap %.3e over 32/64/128 steps (tol 1e-10)", worst)};
}

// --------------------------------------------------------------------------
// 6. Convergence trend on 10-class blobs: MLP, 4 workers, 20 epochs, 5
// seeds. LQ-SGD(r=1,b=8) median accuracy within 3 points of identity;
// top-k at matched payload trails LQ-SGD or ties.

Outcome check_convergence_trend() {
  // Matched payload: same total bits per step as LQ-SGD r=1 b=8 on the two
  // weight matrices (biases travel dense under every method).
  const double lq_bits = 8.0 * ((64 + 128) + (10 + 64));
  const double topk_fraction = lq_bits / (64.0 * (64 * 128 + 10 * 64));

  std::vector<double> acc_id, acc_lq, acc_tk;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Task task = make_task("mlp_blobs", seed);
    TrainConfig cfg;
    cfg.workers = 4;
    cfg.epochs = 20;
    cfg.batch = 16;
    cfg.lr = 0.08;
    cfg.master_seed = seed;

    cfg.compressor = CompressorSpec{.method = "identity"};
    acc_id.push_back(train(task, cfg).final_test_accuracy);
    cfg.compressor = CompressorSpec{.method = "lqsgd", .rank = 1, .bits = 8, .alpha = 1.0};
    acc_lq.push_back(train(task, cfg).final_test_accuracy);
    cfg.compressor = CompressorSpec{.method = "topk", .k_fraction = topk_fraction};
    acc_tk.push_back(train(task, cfg).final_test_accuracy);
  }
  double med_id = median(acc_id), med_lq = median(acc_lq), med_tk = median(acc_tk);
  bool pass = std::fabs(med_id - med_lq) <= 0.03 && med_tk <= med_lq + 1e-12;
  return {pass, fmt("median accuracy identity %.4f, lqsgd %.4f (gap %.4f, tol 0.03), "
                    "topk %.4f at k=%.4f (must not exceed lqsgd)",
                    med_id, med_lq, std::fabs(med_id - med_lq), med_tk, topk_fraction)};
}

// --------------------------------------------------------------------------
// 7. Error-feedback efficacy at b=2: quadratic task, EF-on final distance
// strictly below EF-off, median over 10 seeds.

Outcome check_ef_efficacy() {
  auto final_distance = [](std::uint64_t seed, bool ef) {
    Task task = make_task("quadratic", seed);
    TrainConfig cfg;
    cfg.workers = 1;
    cfg.epochs = 19;  // 16 steps per epoch = 304 steps
    cfg.batch = 16;
    cfg.lr = 0.05;
    cfg.master_seed = seed;
    cfg.compressor = CompressorSpec{.method = "lqsgd", .rank = 1, .bits = 2, .alpha = 1.0,
                                    .error_feedback = ef};
    cfg.divergence_threshold = 1e300;  // let both arms run the full horizon
    TrainingReport report = train(task, cfg);
    const auto& quad = dynamic_cast<const QuadraticModel&>(*task.model);
    double sum = 0.0;
    for (std::size_t i = 0; i < quad.target().size(); ++i) {
      double d = report.final_params[0].tensor.data[i] - quad.target().data()[i];
      sum += d * d;
    }
    return std::sqrt(sum);
  };
  std::vector<double> on, off;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    on.push_back(final_distance(seed, true));
    off.push_back(final_distance(seed, false));
  }
  double med_on = median(on), med_off = median(off);
  // Context: the same comparison at b=3, where the codec contracts.
  auto b3_distance = [](std::uint64_t seed, bool ef) {
    Task task = make_task("quadratic", seed);
    TrainConfig cfg;
    cfg.workers = 1;
    cfg.epochs = 19;
    cfg.batch = 16;
    cfg.lr = 0.05;
    cfg.master_seed = seed;
    cfg.compressor = CompressorSpec{.method = "lqsgd", .rank = 1, .bits = 3, .alpha = 1.0,
                                    .error_feedback = ef};
    TrainingReport report = train(task, cfg);
    const auto& quad = dynamic_cast<const QuadraticModel&>(*task.model);
    double sum = 0.0;
    for (std::size_t i = 0; i < quad.target().size(); ++i) {
      double d = report.final_params[0].tensor.data[i] - quad.target().data()[i];
      sum += d * d;
    }
    return std::sqrt(sum);
  };
  std::vector<double> on3, off3;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    on3.push_back(b3_distance(seed, true));
    off3.push_back(b3_distance(seed, false));
  }
  bool pass = med_on < med_off;
  return {pass, fmt("b=2 median distance EF-on %.3g vs EF-off %.3g (EF-on must be lower; "
                    "2-bit factors overshoot and EF amplifies). At b=3: EF-on %.3g vs EF-off %.3g",
                    med_on, med_off, median(on3), median(off3))};
}

// --------------------------------------------------------------------------
// 8. Gradient-inversion resistance ordering: linear softmax on 8x8 images,
// 20 seeds; median SSIM(identity) > median SSIM(lqsgd r=1 b=8) and
// median SSIM(identity) >= 0.9.

Outcome check_gia_ordering() {
  SoftmaxLinearModel model(64, 10);
  std::vector<double> ssim_id, ssim_lq;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ParamSet params = model.init_params(derive_seed(seed, purpose_tag("model")));
    Matrix image = synthetic_image(8, 8, derive_seed(seed, purpose_tag("image")));
    int label = static_cast<int>(derive_seed(seed, purpose_tag("label")) % 10);
    AttackConfig cfg;
    cfg.steps = 2000;
    cfg.restarts = 3;
    cfg.seed = derive_seed(seed, purpose_tag("attack"));
    cfg.height = 8;
    cfg.width = 8;

    ParamSet obs_id = observed_gradients(model, params, image, label,
                                         CompressorSpec{.method = "identity"}, seed);
    ssim_id.push_back(run_attack(obs_id, label, model, params, image, cfg).ssim);
    ParamSet obs_lq = observed_gradients(
        model, params, image, label,
        CompressorSpec{.method = "lqsgd", .rank = 1, .bits = 8, .alpha = 1.0}, seed);
    ssim_lq.push_back(run_attack(obs_lq, label, model, params, image, cfg).ssim);
  }
  double med_id = median(ssim_id), med_lq = median(ssim_lq);
  bool pass = med_id > med_lq && med_id >= 0.9;
  return {pass, fmt("median SSIM identity %.4f (must be >= 0.9), lqsgd %.4f (must be lower)",
                    med_id, med_lq)};
}

// --------------------------------------------------------------------------
// 9. Gradient correctness: every model's analytic gradient within 1e-4
// relative of central finite differences on 50 random coordinates.

Outcome check_gradients() {
  Dataset blobs2 = make_blobs(64, 8, 2, 3.0, 1.0, 71);
  Dataset blobs10 = make_blobs(64, 16, 10, 3.0, 1.0, 72);
  Dataset quad_ds;

  struct Case {
    const Model* model;
    const Dataset* ds;
  };
  QuadraticModel quadratic(16, 12, 73);
  LogisticModel logistic(8);
  MlpModel mlp(16, 24, 10);
  SoftmaxLinearModel linear(16, 10);
  const Case cases[] = {{&quadratic, &quad_ds}, {&logistic, &blobs2},
                        {&mlp, &blobs10}, {&linear, &blobs10}};

  double worst = 0.0;
  for (const auto& c : cases) {
    ParamSet params = c.model->init_params(derive_seed(74, purpose_tag(c.model->name())));
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < std::min<std::size_t>(8, c.ds->size()); ++i) batch.push_back(i);
    ParamSet grads = c.model->gradient(params, *c.ds, batch);
    SeededRng rng(derive_seed(75, purpose_tag(c.model->name())));
    for (int k = 0; k < 50; ++k) {
      std::size_t l = rng.next_u64() % params.size();
      std::size_t i = rng.next_u64() % params[l].tensor.data.size();
      double fd = finite_difference_grad(*c.model, params, *c.ds, batch, l, i, 1e-5);
      double an = grads[l].tensor.data[i];
      double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  return {worst <= 1e-4, fmt("worst relative gradient error %.3e over 4 models x 50 coords "
                             "(tol 1e-4)", worst)};
}

// --------------------------------------------------------------------------
// 10. Determinism: re-running an experiment with the same spec and seed
// produces byte-identical report JSON.

Outcome check_determinism() {
  fs::path base = fs::temp_directory_path() / "lqsgd_acceptance_c10";
  fs::remove_all(base);
  ExperimentSpec spec;
  spec.task = "quadratic";
  spec.workers = 2;
  spec.epochs = 2;
  spec.batch = 16;
  spec.lr = 0.1;
  spec.seeds = {42};
  spec.compressors = {CompressorSpec{.method = "identity"},
                      CompressorSpec{.method = "lqsgd", .rank = 1, .bits = 8}};
  spec.out_dir = (base / "a").string();
  run_experiment(spec);
  spec.out_dir = (base / "b").string();
  run_experiment(spec);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  bool pass = true;
  int files = 0;
  for (const auto& entry : fs::directory_iterator(base / "a")) {
    fs::path rel = entry.path().filename();
    for (const char* name : {"report.json", "ledger.csv"}) {
      ++files;
      if (slurp(entry.path() / name) != slurp(base / "b" / rel / name)) pass = false;
    }
  }
  fs::remove_all(base);
  return {pass && files == 4, fmt("%d report/ledger files byte-compared across two runs", files)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);
  }

  struct Check {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const Check checks[] = {
      {1, "communication cost model", check_cost_model},
      {2, "quantizer round-trip bound", check_roundtrip_bound},
      {3, "power-iteration exactness", check_power_iteration},
      {4, "error-feedback conservation", check_ef_conservation},
      {5, "distributed equals serial", check_distributed_serial},
      {6, "convergence trend", check_convergence_trend},
      {7, "error-feedback efficacy at b=2", check_ef_efficacy},
      {8, "inversion resistance ordering", check_gia_ordering},
      {9, "gradient correctness", check_gradients},
      {10, "determinism", check_determinism},
  };

  int failures = 0;
  for (const auto& check : checks) {
    if (only != 0 && check.id != only) continue;
    Outcome outcome;
    try {
      outcome = check.fn();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d [%s]: %s — %s\n", check.id, check.name,
                outcome.pass ? "PASS" : "FAIL", outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
