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

#include "lqsgd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lqsgd {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CompressorSpec compressor_from_json(const json& j) {
  CompressorSpec spec;
  spec.method = j.value("method", "identity");
  spec.rank = j.value("rank", 1);
  spec.bits = j.value("bits", 8);
  spec.alpha = j.value("alpha", 1.0);
  spec.k_fraction = j.value("k_fraction", 0.01);
  spec.error_feedback = j.value("error_feedback", true);
  return spec;
}

json compressor_to_json(const CompressorSpec& spec) {
  json j;
  j["method"] = spec.method;
  j["rank"] = spec.rank;
  j["bits"] = spec.bits;
  j["alpha"] = spec.alpha;
  j["k_fraction"] = spec.k_fraction;
  j["error_feedback"] = spec.error_feedback;
  return j;
}

}  // namespace

void ExperimentSpec::validate() const {
  if (compressors.empty()) throw ConfigError("experiment needs at least one compressor");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (out_dir.empty()) throw ConfigError("output directory must be set");
  if (transport != "inprocess" && transport != "loopback") {
    throw ConfigError("transport must be 'inprocess' or 'loopback'");
  }
  // Fail fast: every cell validates before any run starts.
  for (const auto& c : compressors) c.validate();
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  ExperimentSpec spec;
  spec.task = j.value("task", spec.task);
  spec.workers = j.value("workers", spec.workers);
  spec.epochs = j.value("epochs", spec.epochs);
  spec.batch = j.value("batch", spec.batch);
  spec.lr = j.value("lr", spec.lr);
  spec.out_dir = j.value("out", spec.out_dir);
  spec.jobs = j.value("jobs", spec.jobs);
  spec.data_dir = j.value("data_dir", spec.data_dir);
  spec.transport = j.value("transport", spec.transport);
  if (j.contains("seeds")) {
    spec.seeds.clear();
    for (const auto& s : j.at("seeds")) spec.seeds.push_back(s.get<std::uint64_t>());
  }
  if (j.contains("compressors")) {
    for (const auto& c : j.at("compressors")) {
      spec.compressors.push_back(compressor_from_json(c));
    }
  }
  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    spec.attack.steps = a.value("steps", spec.attack.steps);
    spec.attack.step_size = a.value("step_size", spec.attack.step_size);
    spec.attack.tv_weight = a.value("tv_weight", spec.attack.tv_weight);
    spec.attack.restarts = a.value("restarts", spec.attack.restarts);
    spec.attack.image_size = a.value("image_size", spec.attack.image_size);
    spec.attack.classes = a.value("classes", spec.attack.classes);
  }
  return spec;
}

namespace {

struct Cell {
  CompressorSpec compressor;
  std::uint64_t seed = 0;
  std::string dir;
};

std::string cell_dir_name(const std::string& task, const CompressorSpec& spec,
                          std::uint64_t seed) {
  return task + "_" + spec.label() + "_s" + std::to_string(seed);
}

json report_to_json(const ExperimentSpec& spec, const Cell& cell,
                    const TrainingReport& report) {
  json j;
  j["task"] = spec.task;
  j["compressor"] = compressor_to_json(cell.compressor);
  j["compressor_label"] = cell.compressor.label();
  j["workers"] = spec.workers;
  j["epochs"] = spec.epochs;
  j["batch"] = spec.batch;
  j["lr"] = spec.lr;
  j["seed"] = cell.seed;
  j["transport"] = spec.transport;
  j["steps_per_epoch"] = report.steps_per_epoch;
  j["diverged"] = report.diverged;
  json tl = json::array(), vl = json::array(), va = json::array();
  for (const auto& e : report.epochs) {
    tl.push_back(e.train_loss);
    vl.push_back(e.test_loss);
    va.push_back(e.test_accuracy);
  }
  j["epoch_train_loss"] = tl;
  j["epoch_test_loss"] = vl;
  j["epoch_test_accuracy"] = va;
  j["final_train_loss"] = report.final_train_loss;
  j["final_test_loss"] = report.final_test_loss;
  j["final_test_accuracy"] = report.final_test_accuracy;
  const std::uint64_t payload = report.ledger.total_payload_bits();
  const std::uint64_t metadata = report.ledger.total_metadata_bits();
  std::uint64_t dense = 0;
  for (const auto& r : report.ledger.rows()) dense += r.dense_bits;
  j["payload_bits_total"] = payload;
  j["metadata_bits_total"] = metadata;
  j["dense_bits_total"] = dense;
  const double epochs_run = report.epochs.empty() ? 1.0 : double(report.epochs.size());
  j["payload_megabytes_per_epoch"] =
      static_cast<double>(payload + metadata) / 8e6 / epochs_run;
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("short write to " + path);
}

}  // namespace

int run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  Task task = make_task(spec.task, spec.seeds[0], spec.data_dir);

  std::vector<Cell> cells;
  for (const auto& comp : spec.compressors) {
    for (std::uint64_t seed : spec.seeds) {
      Cell c;
      c.compressor = comp;
      c.seed = seed;
      c.dir = (fs::path(spec.out_dir) / cell_dir_name(spec.task, comp, seed)).string();
      cells.push_back(std::move(c));
    }
  }

  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  if (ec) throw IoError("cannot create " + spec.out_dir + ": " + ec.message());

  std::atomic<std::size_t> next{0};
  std::atomic<int> diverged_cells{0};
  std::vector<std::exception_ptr> errors(cells.size());

  auto run_cell = [&](std::size_t i) {
    const Cell& cell = cells[i];
    // The task data depends only on the cell seed, never the compressor.
    Task cell_task = make_task(spec.task, cell.seed, spec.data_dir);
    TrainConfig cfg;
    cfg.workers = spec.workers;
    cfg.epochs = spec.epochs;
    cfg.batch = spec.batch;
    cfg.lr = spec.lr;
    cfg.master_seed = cell.seed;
    cfg.compressor = cell.compressor;
    cfg.transport = spec.transport == "loopback" ? TransportKind::kLoopback
                                                 : TransportKind::kInProcess;
    auto wall0 = std::chrono::steady_clock::now();
    TrainingReport report = train(cell_task, cfg);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    if (report.diverged) diverged_cells.fetch_add(1);

    std::error_code cell_ec;
    fs::create_directories(cell.dir, cell_ec);
    if (cell_ec) throw IoError("cannot create " + cell.dir);
    write_text_file(cell.dir + "/report.json",
                    report_to_json(spec, cell, report).dump(2) + "\n");
    // Timing is non-deterministic, so it lives outside report.json.
    json meta;
    meta["wall_seconds"] = wall;
    json cs = json::array();
    for (const auto& e : report.epochs) cs.push_back(e.compute_seconds);
    meta["epoch_compute_seconds"] = cs;
    write_text_file(cell.dir + "/meta.json", meta.dump(2) + "\n");
    std::ostringstream ledger;
    report.ledger.write_csv(ledger);
    write_text_file(cell.dir + "/ledger.csv", ledger.str());
    std::ostringstream epochs_csv;
    epochs_csv << "epoch,train_loss,test_loss,test_accuracy\n";
    for (const auto& e : report.epochs) {
      epochs_csv << e.epoch << ',' << fmt_double(e.train_loss) << ','
                 << fmt_double(e.test_loss) << ',' << fmt_double(e.test_accuracy) << '\n';
    }
    write_text_file(cell.dir + "/epochs.csv", epochs_csv.str());
  };

  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      try {
        run_cell(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const int jobs = std::min<int>(spec.jobs, static_cast<int>(cells.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return diverged_cells.load() == static_cast<int>(cells.size()) ? 3 : 0;
}

int run_attack_grid(const ExperimentSpec& spec) {
  spec.validate();
  const std::size_t side = spec.attack.image_size;
  SoftmaxLinearModel model(side * side, spec.attack.classes);

  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  if (ec) throw IoError("cannot create " + spec.out_dir);

  std::ostringstream csv;
  csv << "compressor,rank,bits,seed,ssim,objective\n";
  for (const auto& comp : spec.compressors) {
    for (std::uint64_t seed : spec.seeds) {
      ParamSet params = model.init_params(derive_seed(seed, purpose_tag("model")));
      Matrix image = synthetic_image(side, side, derive_seed(seed, purpose_tag("image")));
      int label = static_cast<int>(derive_seed(seed, purpose_tag("label")) %
                                   static_cast<std::uint64_t>(spec.attack.classes));
      ParamSet observed = observed_gradients(model, params, image, label, comp, seed);

      AttackConfig cfg;
      cfg.steps = spec.attack.steps;
      cfg.step_size = spec.attack.step_size;
      cfg.tv_weight = spec.attack.tv_weight;
      cfg.restarts = spec.attack.restarts;
      cfg.seed = derive_seed(seed, purpose_tag("attack"));
      cfg.height = side;
      cfg.width = side;
      AttackResult res = run_attack(observed, label, model, params, image, cfg);

      const bool low_rank = comp.method == "lqsgd" || comp.method == "powersgd";
      csv << comp.label() << ',' << (low_rank ? comp.rank : 0) << ','
          << (comp.method == "lqsgd" ? comp.bits : (comp.method == "powersgd" ? 32 : 0))
          << ',' << seed << ',' << fmt_double(res.ssim) << ','
          << fmt_double(res.objective) << '\n';
      write_pgm(res.reconstruction, (fs::path(spec.out_dir) /
                                     ("recon_" + comp.label() + "_s" + std::to_string(seed) + ".pgm"))
                                        .string());
      write_pgm(image,
                (fs::path(spec.out_dir) / ("original_s" + std::to_string(seed) + ".pgm")).string());
    }
  }
  write_text_file((fs::path(spec.out_dir) / "attack_results.csv").string(), csv.str());
  return 0;
}

std::string compare_reports(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("compare needs at least one report");
  struct Row {
    std::string label, task;
    std::uint64_t seed = 0;
    double accuracy = 0.0, mb_epoch = 0.0, compute_s = 0.0;
    std::uint64_t payload = 0;
    bool diverged = false;
    bool has_compute = false;
  };
  std::vector<Row> rows;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw FormatError("report parse error in " + path + ": " + e.what());
    }
    if (!j.contains("compressor_label") || !j.contains("final_test_accuracy")) {
      throw FormatError("report schema mismatch in " + path);
    }
    Row r;
    r.label = j.at("compressor_label").get<std::string>();
    r.task = j.value("task", "?");
    r.seed = j.value("seed", std::uint64_t{0});
    r.accuracy = j.at("final_test_accuracy").get<double>();
    r.mb_epoch = j.value("payload_megabytes_per_epoch", 0.0);
    r.payload = j.value("payload_bits_total", std::uint64_t{0});
    r.diverged = j.value("diverged", false);
    // Timing lives in the sibling meta.json when present.
    fs::path meta_path = fs::path(path).parent_path() / "meta.json";
    std::ifstream meta_in(meta_path);
    if (meta_in) {
      json meta;
      meta_in >> meta;
      if (meta.contains("epoch_compute_seconds") && !meta["epoch_compute_seconds"].empty()) {
        double sum = 0.0;
        for (const auto& v : meta["epoch_compute_seconds"]) sum += v.get<double>();
        r.compute_s = sum / meta["epoch_compute_seconds"].size();
        r.has_compute = true;
      }
    }
    rows.push_back(std::move(r));
  }

  std::uint64_t min_payload = 0;
  for (const auto& r : rows) {
    if (r.payload > 0 && (min_payload == 0 || r.payload < min_payload)) {
      min_payload = r.payload;
    }
  }

  std::ostringstream out;
  out << "| method | task | seed | accuracy | MB/epoch | size | compute s/epoch |\n";
  out << "|---|---|---|---|---|---|---|\n";
  char buf[128];
  for (const auto& r : rows) {
    double x = (min_payload > 0 && r.payload > 0)
                   ? static_cast<double>(r.payload) / static_cast<double>(min_payload)
                   : 0.0;
    std::snprintf(buf, sizeof(buf), "| %s | %s | %llu | %.4f%s | %.4f | x%.1f | %s |",
                  r.label.c_str(), r.task.c_str(),
                  static_cast<unsigned long long>(r.seed), r.accuracy,
                  r.diverged ? " (diverged)" : "", r.mb_epoch, x,
                  r.has_compute ? fmt_double(r.compute_s).c_str() : "n/a");
    out << buf << "\n";
  }
  return out.str();
}

std::string summarize_ledger_csv(const std::string& path, long steps_per_epoch) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ledger " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,layer,compressor", 0) != 0) {
    throw FormatError("not a ledger CSV: " + path);
  }
  CommLedger ledger;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CommRecord rec;
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    rec.step = std::stol(field);
    std::getline(ss, rec.layer, ',');
    std::getline(ss, rec.compressor, ',');
    std::getline(ss, field, ',');
    rec.payload_bits = std::stoull(field);
    std::getline(ss, field, ',');
    rec.metadata_bits = std::stoull(field);
    ledger.add(std::move(rec));
  }
  auto report = bytes_per_epoch(ledger, steps_per_epoch);
  std::ostringstream out;
  out << "compressor,epoch,payload_bits,metadata_bits,megabytes\n";
  for (const auto& row : report) {
    out << row.compressor << ',' << row.epoch << ',' << row.payload_bits << ','
        << row.metadata_bits << ',' << fmt_double(row.megabytes) << '\n';
  }
  return out.str();
}

void write_pgm(const Matrix& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  for (double v : image.data()) {
    double clamped = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!out) throw IoError("short write to " + path);
}

}  // namespace lqsgd
