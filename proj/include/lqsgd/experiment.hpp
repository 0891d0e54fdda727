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

#include "lqsgd/attack.hpp"
#include "lqsgd/train.hpp"

namespace lqsgd {

struct AttackGridSpec {
  int steps = 600;
  double step_size = 0.5;
  double tv_weight = 0.0;
  int restarts = 3;
  std::size_t image_size = 8;  // height = width
  int classes = 10;
};

/// One experiment grid: task x compressors x seeds. Reports, ledgers and
/// attack artifacts all land under out_dir; nothing is written elsewhere.
struct ExperimentSpec {
  std::string task = "mlp_blobs";
  int workers = 1;
  int epochs = 5;
  std::size_t batch = 16;
  double lr = 0.05;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<CompressorSpec> compressors;
  std::string out_dir = "results";
  int jobs = 1;
  std::string data_dir;
  std::string transport = "inprocess";  // inprocess | loopback
  AttackGridSpec attack;

  void validate() const;
};

/// Parses the declarative JSON config (documented in the README).
ExperimentSpec load_spec(const std::string& path);

/// Runs every (compressor, seed) training cell, writing per-cell
/// report.json (deterministic), meta.json (timing) and ledger.csv.
/// Returns 0 on success, 3 when every cell diverged. Diverged cells are
/// marked in their reports and do not stop the grid.
int run_experiment(const ExperimentSpec& spec);

/// Runs the gradient-inversion grid over (compressor, seed) cells on the
/// linear softmax model, writing attack_results.csv and PGM images.
int run_attack_grid(const ExperimentSpec& spec);

/// Renders the accuracy / size / compute-time comparison table (markdown)
/// from report.json files. Throws IoError on unreadable input.
std::string compare_reports(const std::vector<std::string>& paths);

/// Per-epoch traffic table from an exported ledger CSV.
std::string summarize_ledger_csv(const std::string& path, long steps_per_epoch);

void write_pgm(const Matrix& image, const std::string& path);

}  // namespace lqsgd
