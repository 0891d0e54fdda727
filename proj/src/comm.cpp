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

#include "lqsgd/comm.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <map>
#include <thread>

namespace lqsgd {

std::uint64_t CommLedger::total_payload_bits() const {
  std::uint64_t sum = 0;
  for (const auto& r : rows_) sum += r.payload_bits;
  return sum;
}

std::uint64_t CommLedger::total_metadata_bits() const {
  std::uint64_t sum = 0;
  for (const auto& r : rows_) sum += r.metadata_bits;
  return sum;
}

void CommLedger::write_csv(std::ostream& out) const {
  out << "step,layer,compressor,payload_bits,metadata_bits\n";
  for (const auto& r : rows_) {
    out << r.step << ',' << r.layer << ',' << r.compressor << ',' << r.payload_bits
        << ',' << r.metadata_bits << '\n';
  }
}

std::vector<EpochTraffic> bytes_per_epoch(const CommLedger& ledger, long steps_per_epoch) {
  std::vector<EpochTraffic> report;
  if (ledger.empty() || steps_per_epoch <= 0) return report;

  std::map<std::pair<std::string, long>, EpochTraffic> acc;
  for (const auto& r : ledger.rows()) {
    long epoch = r.step / steps_per_epoch;
    auto& row = acc[{r.compressor, epoch}];
    row.compressor = r.compressor;
    row.epoch = epoch;
    row.payload_bits += r.payload_bits;
    row.metadata_bits += r.metadata_bits;
    row.dense_bits += r.dense_bits;
  }
  report.reserve(acc.size());
  for (auto& [key, row] : acc) {
    row.megabytes = static_cast<double>(row.payload_bits + row.metadata_bits) / 8e6;
    if (row.payload_bits > 0) {
      row.ratio_vs_dense =
          static_cast<double>(row.dense_bits) / static_cast<double>(row.payload_bits);
      row.ratio_vs_dense_total =
          static_cast<double>(row.dense_bits) /
          static_cast<double>(row.payload_bits + row.metadata_bits);
    }
    report.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Loopback socket transport

namespace {

void write_all(int fd, const void* data, std::size_t size) {
  const char* p = static_cast<const char*>(data);
  while (size > 0) {
    ssize_t n = ::write(fd, p, size);
    if (n <= 0) throw ProtocolError("loopback write failed");
    p += n;
    size -= static_cast<std::size_t>(n);
  }
}

void read_all(int fd, void* data, std::size_t size) {
  char* p = static_cast<char*>(data);
  while (size > 0) {
    ssize_t n = ::read(fd, p, size);
    if (n <= 0) throw ProtocolError("loopback read failed");
    p += n;
    size -= static_cast<std::size_t>(n);
  }
}

// 4-byte little-endian length, then the message bytes.
void write_frame(int fd, const std::vector<std::uint8_t>& bytes) {
  std::uint32_t len = static_cast<std::uint32_t>(bytes.size());
  unsigned char hdr[4];
  std::memcpy(hdr, &len, 4);
  write_all(fd, hdr, 4);
  write_all(fd, bytes.data(), bytes.size());
}

std::vector<std::uint8_t> read_frame(int fd) {
  unsigned char hdr[4];
  read_all(fd, hdr, 4);
  std::uint32_t len;
  std::memcpy(&len, hdr, 4);
  std::vector<std::uint8_t> bytes(len);
  if (len > 0) read_all(fd, bytes.data(), len);
  return bytes;
}

}  // namespace

struct WorkerGroup::Loopback {
  int listen_fd = -1;
  std::uint16_t port = 0;
  std::vector<int> peer_fd;    // root side, indexed by worker id (root entry unused)
  std::vector<int> worker_fd;  // non-root side
  bool connected = false;

  explicit Loopback(int n) : peer_fd(static_cast<std::size_t>(n), -1),
                             worker_fd(static_cast<std::size_t>(n), -1) {
    listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd < 0) throw ProtocolError("loopback socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd, n) != 0) {
      throw ProtocolError("loopback bind/listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port = ntohs(addr.sin_port);
  }

  ~Loopback() {
    for (int fd : peer_fd) {
      if (fd >= 0) ::close(fd);
    }
    for (int fd : worker_fd) {
      if (fd >= 0) ::close(fd);
    }
    if (listen_fd >= 0) ::close(listen_fd);
  }

  void connect_worker(int worker) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("loopback socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      throw ProtocolError("loopback connect failed");
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::uint8_t id = static_cast<std::uint8_t>(worker);
    write_all(fd, &id, 1);
    worker_fd[static_cast<std::size_t>(worker)] = fd;
  }

  void accept_peers(int n) {
    for (int i = 1; i < n; ++i) {
      int fd = ::accept(listen_fd, nullptr, nullptr);
      if (fd < 0) throw ProtocolError("loopback accept failed");
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::uint8_t id = 0;
      read_all(fd, &id, 1);
      if (id == 0 || id >= n) throw ProtocolError("bad loopback handshake");
      peer_fd[id] = fd;
    }
    connected = true;
  }
};

// ---------------------------------------------------------------------------

WorkerGroup::WorkerGroup(int n_workers, TransportKind kind)
    : n_workers_(n_workers),
      kind_(kind),
      sync_(n_workers),
      slots_(static_cast<std::size_t>(n_workers)) {
  if (n_workers < 1) throw ConfigError("worker group needs at least one worker");
  if (kind_ == TransportKind::kLoopback && n_workers > 1) {
    loopback_ = std::make_unique<Loopback>(n_workers);
  }
}

WorkerGroup::~WorkerGroup() = default;

void WorkerGroup::run(const std::function<void(int)>& body) {
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_workers_));
  threads.reserve(static_cast<std::size_t>(n_workers_));
  for (int w = 0; w < n_workers_; ++w) {
    threads.emplace_back([&, w] {
      try {
        body(w);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void WorkerGroup::validate_slots() const {
  const auto& first = slots_[0];
  for (int i = 1; i < n_workers_; ++i) {
    const auto& m = slots_[static_cast<std::size_t>(i)];
    if (m.index() != first.index() || message_rows(m) != message_rows(first) ||
        message_cols(m) != message_cols(first)) {
      throw ProtocolError("collective called with mismatched messages");
    }
  }
}

void WorkerGroup::record(const CommTag& tag, const char* op,
                         const CompressedMessage& sample) {
  WireSize ws = message_wire_size(sample);
  const std::uint64_t n = static_cast<std::uint64_t>(n_workers_);
  CommRecord rec;
  rec.step = tag.step;
  rec.layer = tag.layer;
  rec.compressor = tag.compressor;
  rec.op = op;
  rec.payload_bits = ws.payload_bits * n;
  rec.metadata_bits = ws.metadata_bits * n;
  rec.dense_bits = 32ull * message_rows(sample) * message_cols(sample) * n;
  ledger_.add(std::move(rec));
}

CompressedMessage WorkerGroup::reduce_in_process(int worker, const CompressedMessage& msg,
                                                 const Reducer& reducer, const CommTag& tag,
                                                 const char* op) {
  slots_[static_cast<std::size_t>(worker)] = msg;
  sync_.arrive_and_wait();
  if (worker == 0) {
    try {
      validate_slots();
      record(tag, op, slots_[0]);
      result_ = reducer(slots_);
    } catch (...) {
      error_ = std::current_exception();
    }
  }
  sync_.arrive_and_wait();
  if (error_) std::rethrow_exception(error_);
  return result_;
}

CompressedMessage WorkerGroup::reduce_loopback(int worker, const CompressedMessage& msg,
                                               const Reducer& reducer, const CommTag& tag,
                                               const char* op) {
  if (worker != 0) {
    if (loopback_->worker_fd[static_cast<std::size_t>(worker)] < 0) {
      loopback_->connect_worker(worker);
    }
    int fd = loopback_->worker_fd[static_cast<std::size_t>(worker)];
    write_frame(fd, serialize(msg));
    return deserialize(read_frame(fd));
  }
  if (!loopback_->connected) loopback_->accept_peers(n_workers_);
  // The root's own message takes the same serialize/deserialize path as the
  // wire so all workers see identical arithmetic.
  slots_[0] = deserialize(serialize(msg));
  for (int i = 1; i < n_workers_; ++i) {
    slots_[static_cast<std::size_t>(i)] = deserialize(read_frame(loopback_->peer_fd[i]));
  }
  validate_slots();
  record(tag, op, slots_[0]);
  CompressedMessage reduced = reducer(slots_);
  std::vector<std::uint8_t> bytes = serialize(reduced);
  for (int i = 1; i < n_workers_; ++i) {
    write_frame(loopback_->peer_fd[i], bytes);
  }
  return deserialize(bytes);
}

CompressedMessage WorkerGroup::all_reduce(int worker, const CompressedMessage& msg,
                                          const Reducer& reducer, const CommTag& tag) {
  if (worker < 0 || worker >= n_workers_) throw ProtocolError("bad worker id");
  if (n_workers_ == 1) {
    // Degenerate collective; still charged to the ledger.
    slots_[0] = msg;
    record(tag, "all_reduce", slots_[0]);
    return reducer(slots_);
  }
  if (kind_ == TransportKind::kLoopback) {
    return reduce_loopback(worker, msg, reducer, tag, "all_reduce");
  }
  return reduce_in_process(worker, msg, reducer, tag, "all_reduce");
}

Matrix WorkerGroup::all_reduce_mean(int worker, const CompressedMessage& msg,
                                    const CommTag& tag) {
  return decode(all_reduce(worker, msg, mean_decoded, tag));
}

void WorkerGroup::barrier(int worker) {
  if (worker < 0 || worker >= n_workers_) throw ProtocolError("bad worker id");
  if (n_workers_ > 1) sync_.arrive_and_wait();
}

}  // namespace lqsgd
