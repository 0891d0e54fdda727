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
#include <string>
#include <vector>

#include "lqsgd/comm.hpp"
#include "lqsgd/models.hpp"

namespace lqsgd {

/// Which compressor a run uses and its knobs. Only the fields the method
/// needs are read: rank/bits/alpha for lqsgd, rank for powersgd, k_fraction
/// for topk. error_feedback=false disables residual accumulation in the
/// low-rank methods (an ablation switch).
struct CompressorSpec {
  std::string method = "identity";  // identity | topk | powersgd | lqsgd
  int rank = 1;
  int bits = 8;
  double alpha = 1.0;
  double k_fraction = 0.01;
  bool error_feedback = true;

  void validate() const;
  std::string label() const;
};

std::unique_ptr<Compressor> make_compressor(const CompressorSpec& spec,
                                            std::uint64_t master_seed);

struct TrainConfig {
  int workers = 1;
  int epochs = 1;
  std::size_t batch = 16;  // per worker
  double lr = 0.05;
  std::uint64_t master_seed = 1;
  CompressorSpec compressor;
  TransportKind transport = TransportKind::kInProcess;
  double divergence_threshold = 1e10;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double compute_seconds = 0.0;  // max across workers, collectives excluded
};

struct TrainingReport {
  std::string task;
  std::string compressor;
  long steps_per_epoch = 0;
  std::vector<EpochStats> epochs;
  bool diverged = false;
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  double final_test_accuracy = 0.0;
  CommLedger ledger;
  ParamSet final_params;
};

struct Task {
  std::string name;
  std::shared_ptr<const Model> model;
  Dataset train_data;
  Dataset test_data;
};

/// Builds one of the named desk-scale tasks:
///   quadratic       16x12 quadratic bowl (data-free)
///   logistic_blobs  binary blobs, 16 features
///   mlp_blobs       10-class blobs, 32 features, MLP 32-64-10
///   mlp_mnist       IDX files from data_dir, MLP 784-64-10
Task make_task(const std::string& name, std::uint64_t seed, const std::string& data_dir = "");

/// Synchronous data-parallel SGD: per step each worker computes gradients
/// on its shard, compresses layer by layer, all-reduces, finalizes (error
/// feedback update) and applies the shared reconstruction. Sharding is
/// strided over a seeded shuffle, so N workers with batch B consume exactly
/// the samples a serial run with batch N*B consumes per step.
TrainingReport train(const Task& task, const TrainConfig& cfg);

/// Mean loss and accuracy of params on a dataset.
std::pair<double, double> evaluate(const Model& model, const ParamSet& params,
                                   const Dataset& ds);

/// Plain single-process SGD with the same seed derivations; the reference
/// the distributed loop is checked against.
ParamSet serial_sgd_reference(const Task& task, int epochs, std::size_t batch, double lr,
                              std::uint64_t master_seed);

}  // namespace lqsgd
