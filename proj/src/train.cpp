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

#include "lqsgd/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace lqsgd {

void CompressorSpec::validate() const {
  if (method == "identity") return;
  if (method == "topk") {
    if (!(k_fraction > 0.0) || k_fraction > 1.0) {
      throw ConfigError("topk requires k_fraction in (0, 1]");
    }
    return;
  }
  if (method == "powersgd") {
    if (rank < 1) throw ConfigError("powersgd requires rank >= 1");
    return;
  }
  if (method == "lqsgd") {
    if (rank < 1) throw ConfigError("lqsgd requires rank >= 1");
    if (!((bits >= 2 && bits <= 16) || bits == 64)) {
      throw ConfigError("lqsgd requires bits in [2,16] (or 64 for the lossless path)");
    }
    if (bits != 64 && !(alpha > 0.0)) throw ConfigError("lqsgd requires alpha > 0");
    return;
  }
  throw ConfigError("unknown compressor method '" + method + "'");
}

std::string CompressorSpec::label() const {
  if (method == "topk") {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "topk_k%g", k_fraction);
    return buf;
  }
  if (method == "powersgd") return "powersgd_r" + std::to_string(rank);
  if (method == "lqsgd") {
    return "lqsgd_r" + std::to_string(rank) + "_b" + std::to_string(bits);
  }
  return method;
}

std::unique_ptr<Compressor> make_compressor(const CompressorSpec& spec,
                                            std::uint64_t master_seed) {
  spec.validate();
  const std::uint64_t q0 = derive_seed(master_seed, purpose_tag("q0"));
  if (spec.method == "identity") return make_identity();
  if (spec.method == "topk") return make_topk(spec.k_fraction);
  if (spec.method == "powersgd") return make_powersgd(spec.rank, q0, spec.error_feedback);
  return make_lqsgd(spec.rank, spec.bits, spec.alpha, q0, spec.error_feedback);
}

void TrainConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  compressor.validate();
}

Task make_task(const std::string& name, std::uint64_t seed, const std::string& data_dir) {
  const std::uint64_t data_seed = derive_seed(seed, purpose_tag("data"));
  if (name == "quadratic") {
    Task t;
    t.name = name;
    t.model = std::make_shared<QuadraticModel>(16, 12, derive_seed(seed, purpose_tag("target")));
    // The quadratic loss ignores the data; the dataset only paces the loop.
    t.train_data = make_blobs(256, 1, 1, 1.0, 1.0, data_seed);
    t.test_data = make_blobs(32, 1, 1, 1.0, 1.0, data_seed + 1);
    return t;
  }
  if (name == "logistic_blobs") {
    Task t;
    t.name = name;
    t.model = std::make_shared<LogisticModel>(16);
    t.train_data = make_blobs(1024, 16, 2, 4.0, 1.5, data_seed,
                              derive_seed(seed, purpose_tag("train-samples")));
    t.test_data = make_blobs(256, 16, 2, 4.0, 1.5, data_seed,
                             derive_seed(seed, purpose_tag("test-samples")));
    return t;
  }
  if (name == "mlp_blobs") {
    // 128 input features with heavy class overlap: hard enough that the
    // compressors separate, easy enough to converge in 20 epochs.
    Task t;
    t.name = name;
    t.model = std::make_shared<MlpModel>(128, 64, 10);
    t.train_data = make_blobs(2048, 128, 10, 1.5, 6.0, data_seed,
                              derive_seed(seed, purpose_tag("train-samples")));
    t.test_data = make_blobs(512, 128, 10, 1.5, 6.0, data_seed,
                             derive_seed(seed, purpose_tag("test-samples")));
    return t;
  }
  if (name == "mlp_mnist") {
    std::string dir = data_dir;
    if (dir.empty()) {
      const char* env = std::getenv("LQSGD_DATA_DIR");
      if (env != nullptr) dir = env;
    }
    if (dir.empty()) throw ConfigError("mlp_mnist needs a dataset directory (LQSGD_DATA_DIR)");
    Task t;
    t.name = name;
    t.model = std::make_shared<MlpModel>(784, 64, 10);
    t.train_data = read_mnist_idx(dir + "/train-images-idx3-ubyte",
                                  dir + "/train-labels-idx1-ubyte", 2000);
    t.test_data = read_mnist_idx(dir + "/t10k-images-idx3-ubyte",
                                 dir + "/t10k-labels-idx1-ubyte", 500);
    return t;
  }
  throw ConfigError("unknown task '" + name + "'");
}

std::pair<double, double> evaluate(const Model& model, const ParamSet& params,
                                   const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  double loss = model.loss(params, ds, all);
  double acc = model.accuracy(params, ds);
  return {loss, acc};
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool params_finite(const ParamSet& params) {
  for (const auto& p : params) {
    for (double v : p.tensor.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

TrainingReport train(const Task& task, const TrainConfig& cfg) {
  cfg.validate();
  const Model& model = *task.model;
  const int n_workers = cfg.workers;
  const std::size_t global_batch = cfg.batch * static_cast<std::size_t>(n_workers);
  const long steps_per_epoch =
      static_cast<long>(task.train_data.size() / global_batch);
  if (steps_per_epoch < 1) {
    throw ConfigError("dataset too small for workers*batch");
  }

  const ParamSet init =
      model.init_params(derive_seed(cfg.master_seed, purpose_tag("init")));
  auto compressor = make_compressor(cfg.compressor, cfg.master_seed);
  const std::string comp_label = cfg.compressor.label();

  // Layer geometry from the initial parameters.
  std::vector<LayerShape> shapes(init.size());
  for (std::size_t l = 0; l < init.size(); ++l) {
    shapes[l] = reshape_to_matrix(init[l].tensor).second;
  }

  WorkerGroup group(n_workers, cfg.transport);
  std::vector<ParamSet> params(static_cast<std::size_t>(n_workers), init);
  std::vector<std::vector<CompressorState>> states(static_cast<std::size_t>(n_workers));
  for (auto& per_worker : states) {
    per_worker.reserve(init.size());
    for (std::size_t l = 0; l < init.size(); ++l) {
      per_worker.push_back(compressor->make_state(shapes[l].rows, shapes[l].cols, l));
    }
  }

  TrainingReport report;
  report.task = task.name;
  report.compressor = comp_label;
  report.steps_per_epoch = steps_per_epoch;

  std::vector<double> epoch_compute(static_cast<std::size_t>(n_workers), 0.0);
  std::atomic<bool> diverged{false};
  std::atomic<bool> stop{false};

  const auto reducer = [&compressor](std::span<const CompressedMessage> msgs) {
    return compressor->aggregate(msgs);
  };

  group.run([&](int w) {
    ParamSet& local = params[static_cast<std::size_t>(w)];
    auto& state = states[static_cast<std::size_t>(w)];

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      if (stop.load()) break;
      const auto order = shuffled_indices(
          task.train_data.size(),
          derive_seed(cfg.master_seed, purpose_tag("shuffle"),
                      static_cast<std::uint64_t>(epoch)));
      double compute_s = 0.0;

      for (long s = 0; s < steps_per_epoch; ++s) {
        const long step_id = static_cast<long>(epoch) * steps_per_epoch + s;
        auto t0 = Clock::now();

        // Strided shard: sample q of worker w at step s sits at global
        // position (s*B + q)*N + w of the epoch order.
        std::vector<std::size_t> batch(cfg.batch);
        for (std::size_t q = 0; q < cfg.batch; ++q) {
          batch[q] = order[(static_cast<std::size_t>(s) * cfg.batch + q) *
                               static_cast<std::size_t>(n_workers) +
                           static_cast<std::size_t>(w)];
        }
        ParamSet grads = model.gradient(local, task.train_data, batch);

        for (std::size_t l = 0; l < grads.size(); ++l) {
          auto [gmat, shape] = reshape_to_matrix(grads[l].tensor);
          if (!all_finite(gmat)) {
            // Poisoned gradient: keep the collective protocol alive with a
            // zero contribution and abort at the next epoch boundary.
            diverged.store(true);
            stop.store(true);
            gmat = Matrix(shape.rows, shape.cols);
          }
          CommTag tag{step_id, grads[l].name, comp_label};
          Matrix ghat;
          if (shape.pass_through) {
            // 1-D parameters travel dense regardless of method.
            CompressedMessage msg = DensePayload{std::move(gmat)};
            compute_s += seconds_since(t0);
            ghat = group.all_reduce_mean(w, msg, tag);
            t0 = Clock::now();
          } else {
            CompressedMessage msg = compressor->compress(gmat, state[l]);
            compute_s += seconds_since(t0);
            CompressedMessage agg = group.all_reduce(w, msg, reducer, tag);
            t0 = Clock::now();
            ghat = compressor->finalize(gmat, agg, state[l]);
          }
          auto& values = local[l].tensor.data;
          for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] -= cfg.lr * ghat.data()[i];
          }
        }
        compute_s += seconds_since(t0);
      }

      epoch_compute[static_cast<std::size_t>(w)] = compute_s;
      group.barrier(w);
      if (w == 0) {
        auto [train_loss, train_acc] = evaluate(model, local, task.train_data);
        (void)train_acc;
        auto [test_loss, test_acc] = evaluate(model, local, task.test_data);
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = train_loss;
        st.test_loss = test_loss;
        st.test_accuracy = test_acc;
        st.compute_seconds = 0.0;
        for (double c : epoch_compute) st.compute_seconds = std::max(st.compute_seconds, c);
        report.epochs.push_back(st);
        if (!std::isfinite(train_loss) || train_loss > cfg.divergence_threshold ||
            !params_finite(local)) {
          diverged.store(true);
          stop.store(true);
        }
      }
      group.barrier(w);
    }
  });

  report.diverged = diverged.load();
  if (!report.epochs.empty()) {
    const auto& last = report.epochs.back();
    report.final_train_loss = last.train_loss;
    report.final_test_loss = last.test_loss;
    report.final_test_accuracy = last.test_accuracy;
  }
  report.ledger = group.ledger();
  report.final_params = params[0];
  return report;
}

ParamSet serial_sgd_reference(const Task& task, int epochs, std::size_t batch, double lr,
                              std::uint64_t master_seed) {
  const Model& model = *task.model;
  ParamSet params = model.init_params(derive_seed(master_seed, purpose_tag("init")));
  const long steps_per_epoch = static_cast<long>(task.train_data.size() / batch);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = shuffled_indices(
        task.train_data.size(),
        derive_seed(master_seed, purpose_tag("shuffle"), static_cast<std::uint64_t>(epoch)));
    for (long s = 0; s < steps_per_epoch; ++s) {
      std::vector<std::size_t> indices(batch);
      for (std::size_t q = 0; q < batch; ++q) {
        indices[q] = order[static_cast<std::size_t>(s) * batch + q];
      }
      ParamSet grads = model.gradient(params, task.train_data, indices);
      for (std::size_t l = 0; l < grads.size(); ++l) {
        auto& values = params[l].tensor.data;
        for (std::size_t i = 0; i < values.size(); ++i) {
          values[i] -= lr * grads[l].tensor.data[i];
        }
      }
    }
  }
  return params;
}

}  // namespace lqsgd
