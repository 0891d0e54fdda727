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

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "lqsgd/experiment.hpp"

namespace {

// Exit codes: 0 success, 2 usage, 3 divergence in all cells, 4 IO failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

struct CommonFlags {
  std::string config;
  std::string out;
  std::string method;
  std::uint64_t seed = 0;
  int workers = 0;
  int epochs = 0;
  int rank = 0;
  int bits = 0;
  double alpha = 0.0;
  double topk = 0.0;
  int jobs = 0;
  bool seed_set = false, workers_set = false, epochs_set = false, rank_set = false;
  bool bits_set = false, alpha_set = false, topk_set = false, jobs_set = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config file (JSON)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--method", f.method, "compressor: identity|topk|powersgd|lqsgd");
  cmd->add_option("--seed", f.seed)->each([&](const std::string&) { f.seed_set = true; });
  cmd->add_option("--workers", f.workers)->each([&](const std::string&) { f.workers_set = true; });
  cmd->add_option("--epochs", f.epochs)->each([&](const std::string&) { f.epochs_set = true; });
  cmd->add_option("--rank", f.rank)->each([&](const std::string&) { f.rank_set = true; });
  cmd->add_option("--bits", f.bits)->each([&](const std::string&) { f.bits_set = true; });
  cmd->add_option("--alpha", f.alpha)->each([&](const std::string&) { f.alpha_set = true; });
  cmd->add_option("--topk", f.topk, "top-k fraction")
      ->each([&](const std::string&) { f.topk_set = true; });
  cmd->add_option("--jobs", f.jobs)->each([&](const std::string&) { f.jobs_set = true; });
}

// Flags win over config-file values.
lqsgd::ExperimentSpec build_spec(const CommonFlags& f, const std::string& task_flag) {
  lqsgd::ExperimentSpec spec;
  if (!f.config.empty()) spec = lqsgd::load_spec(f.config);
  if (!task_flag.empty()) spec.task = task_flag;
  if (!f.out.empty()) spec.out_dir = f.out;
  if (f.seed_set) spec.seeds = {f.seed};
  if (f.workers_set) spec.workers = f.workers;
  if (f.epochs_set) spec.epochs = f.epochs;
  if (f.jobs_set) spec.jobs = f.jobs;
  if (!f.method.empty()) {
    lqsgd::CompressorSpec comp;
    comp.method = f.method;
    if (f.rank_set) comp.rank = f.rank;
    if (f.bits_set) comp.bits = f.bits;
    if (f.alpha_set) comp.alpha = f.alpha;
    if (f.topk_set) comp.k_fraction = f.topk;
    spec.compressors = {comp};
  } else if (!spec.compressors.empty()) {
    for (auto& comp : spec.compressors) {
      if (f.rank_set) comp.rank = f.rank;
      if (f.bits_set) comp.bits = f.bits;
      if (f.alpha_set) comp.alpha = f.alpha;
      if (f.topk_set) comp.k_fraction = f.topk;
    }
  }
  const char* env_dir = std::getenv("LQSGD_DATA_DIR");
  if (spec.data_dir.empty() && env_dir != nullptr) spec.data_dir = env_dir;
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LQ-SGD gradient compression toolkit"};
  app.require_subcommand(1);

  CommonFlags train_flags, attack_flags;
  std::string train_task, attack_task;
  auto* train_cmd = app.add_subcommand("train", "run a training experiment grid");
  add_common_flags(train_cmd, train_flags);
  train_cmd->add_option("--task", train_task, "quadratic|logistic_blobs|mlp_blobs|mlp_mnist");

  auto* attack_cmd = app.add_subcommand("attack", "run the gradient-inversion grid");
  add_common_flags(attack_cmd, attack_flags);

  std::vector<std::string> compare_paths;
  auto* compare_cmd = app.add_subcommand("compare", "tabulate report.json files");
  compare_cmd->add_option("reports", compare_paths, "report.json paths")->required();

  std::string ledger_path;
  long ledger_steps = 1;
  auto* ledger_cmd = app.add_subcommand("ledger", "summarize an exported ledger CSV");
  ledger_cmd->add_option("csv", ledger_path, "ledger.csv path")->required();
  ledger_cmd->add_option("--steps-per-epoch", ledger_steps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      return lqsgd::run_experiment(build_spec(train_flags, train_task));
    }
    if (attack_cmd->parsed()) {
      return lqsgd::run_attack_grid(build_spec(attack_flags, ""));
    }
    if (compare_cmd->parsed()) {
      std::cout << lqsgd::compare_reports(compare_paths);
      return kExitOk;
    }
    if (ledger_cmd->parsed()) {
      std::cout << lqsgd::summarize_ledger_csv(ledger_path, ledger_steps);
      return kExitOk;
    }
  } catch (const lqsgd::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const lqsgd::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
