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

#include <barrier>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lqsgd/compressor.hpp"
#include "lqsgd/message.hpp"

namespace lqsgd {

/// One ledger row per collective call. payload_bits is the serialized
/// payload of one worker message times N (flat accounting: every worker
/// ships its message once per collective); dense_bits is what the same
/// exchange would cost uncompressed at 32 bits per entry.
struct CommRecord {
  long step = 0;
  std::string layer;
  std::string compressor;
  std::string op;
  std::uint64_t payload_bits = 0;
  std::uint64_t metadata_bits = 0;
  std::uint64_t dense_bits = 0;
};

class CommLedger {
 public:
  void add(CommRecord record) { rows_.push_back(std::move(record)); }
  const std::vector<CommRecord>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  void clear() { rows_.clear(); }

  std::uint64_t total_payload_bits() const;
  std::uint64_t total_metadata_bits() const;

  /// Columns: step,layer,compressor,payload_bits,metadata_bits
  void write_csv(std::ostream& out) const;

 private:
  std::vector<CommRecord> rows_;
};

/// Per-compressor, per-epoch traffic summary.
struct EpochTraffic {
  std::string compressor;
  long epoch = 0;
  std::uint64_t payload_bits = 0;
  std::uint64_t metadata_bits = 0;
  std::uint64_t dense_bits = 0;
  double megabytes = 0.0;           // payload + metadata
  double ratio_vs_dense = 0.0;      // dense / payload
  double ratio_vs_dense_total = 0.0;  // dense / (payload + metadata)
};

/// Aggregates ledger rows into per-epoch totals. Steps [e*steps_per_epoch,
/// (e+1)*steps_per_epoch) form epoch e. Empty ledger gives an empty report.
std::vector<EpochTraffic> bytes_per_epoch(const CommLedger& ledger, long steps_per_epoch);

struct CommTag {
  long step = 0;
  std::string layer;
  std::string compressor;
};

enum class TransportKind { kInProcess, kLoopback };

/// N simulated workers exchanging CompressedMessages through collectives.
///
/// Workers run as real threads; collectives are synchronization barriers.
/// The reduction happens once at worker 0 in worker-index order and the
/// result is broadcast, so every worker returns a bitwise-identical value.
/// The loopback transport moves the exact serialized wire bytes over
/// 127.0.0.1 sockets with 4-byte little-endian length-prefixed frames;
/// the in-process transport hands the messages over directly.
class WorkerGroup {
 public:
  using Reducer = std::function<CompressedMessage(std::span<const CompressedMessage>)>;

  explicit WorkerGroup(int n_workers, TransportKind kind = TransportKind::kInProcess);
  ~WorkerGroup();

  WorkerGroup(const WorkerGroup&) = delete;
  WorkerGroup& operator=(const WorkerGroup&) = delete;

  int size() const { return n_workers_; }
  TransportKind transport() const { return kind_; }

  /// Runs body(worker_id) on n_workers threads and joins them. The first
  /// exception thrown by any worker is rethrown here.
  void run(const std::function<void(int)>& body);

  /// Collective: every worker contributes one message, the reducer runs at
  /// the root over all N in worker order, and every worker receives the
  /// reduced message. Messages must share variant and dims.
  CompressedMessage all_reduce(int worker, const CompressedMessage& msg,
                               const Reducer& reducer, const CommTag& tag);

  /// Arithmetic mean of the decoded matrices; the common collective.
  Matrix all_reduce_mean(int worker, const CompressedMessage& msg, const CommTag& tag);

  void barrier(int worker);

  /// Valid outside run(); mutation is serialized at the root inside.
  CommLedger& ledger() { return ledger_; }
  const CommLedger& ledger() const { return ledger_; }

 private:
  struct Loopback;

  void validate_slots() const;
  void record(const CommTag& tag, const char* op, const CompressedMessage& sample);
  CompressedMessage reduce_in_process(int worker, const CompressedMessage& msg,
                                      const Reducer& reducer, const CommTag& tag,
                                      const char* op);
  CompressedMessage reduce_loopback(int worker, const CompressedMessage& msg,
                                    const Reducer& reducer, const CommTag& tag,
                                    const char* op);

  int n_workers_;
  TransportKind kind_;
  CommLedger ledger_;
  std::barrier<> sync_;
  std::vector<CompressedMessage> slots_;
  CompressedMessage result_;
  std::exception_ptr error_;
  std::unique_ptr<Loopback> loopback_;
};

}  // namespace lqsgd
