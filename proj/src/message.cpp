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

#include "lqsgd/message.hpp"

#include <cstring>

namespace lqsgd {

namespace {

constexpr std::uint8_t kTagDense = 0;
constexpr std::uint8_t kTagTopK = 1;
constexpr std::uint8_t kTagLowRank = 2;

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T read_le(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  if (offset + sizeof(T) > bytes.size()) throw FormatError("message truncated");
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

}  // namespace

const char* variant_name(const CompressedMessage& msg) {
  switch (msg.index()) {
    case 0: return "dense";
    case 1: return "topk";
    default: return "lowrank";
  }
}

std::size_t message_rows(const CompressedMessage& msg) {
  if (const auto* d = std::get_if<DensePayload>(&msg)) return d->data.rows();
  if (const auto* t = std::get_if<TopKPayload>(&msg)) return t->rows;
  return std::get<LowRankPayload>(msg).p.rows;
}

std::size_t message_cols(const CompressedMessage& msg) {
  if (const auto* d = std::get_if<DensePayload>(&msg)) return d->data.cols();
  if (const auto* t = std::get_if<TopKPayload>(&msg)) return t->cols;
  return std::get<LowRankPayload>(msg).q.rows;
}

Matrix decode(const CompressedMessage& msg) {
  if (const auto* d = std::get_if<DensePayload>(&msg)) {
    return d->data;
  }
  if (const auto* t = std::get_if<TopKPayload>(&msg)) {
    if (t->indices.size() != t->values.size()) {
      throw FormatError("top-k index/value count mismatch");
    }
    Matrix m(t->rows, t->cols);
    for (std::size_t i = 0; i < t->indices.size(); ++i) {
      if (t->indices[i] >= m.size()) throw FormatError("top-k index out of range");
      m.data()[t->indices[i]] = t->values[i];
    }
    return m;
  }
  const auto& lr = std::get<LowRankPayload>(msg);
  if (lr.p.cols != lr.q.cols) throw FormatError("factor rank mismatch");
  return matmul(log_dequantize(lr.p), transpose(log_dequantize(lr.q)));
}

Matrix decode(const CompressedMessage& msg, std::size_t rows, std::size_t cols) {
  if (message_rows(msg) != rows || message_cols(msg) != cols) {
    throw FormatError("message decodes to " + std::to_string(message_rows(msg)) +
                      "x" + std::to_string(message_cols(msg)) + ", expected " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  return decode(msg);
}

WireSize message_wire_size(const CompressedMessage& msg) {
  WireSize ws;
  ws.metadata_bits = 8;  // variant tag
  if (const auto* d = std::get_if<DensePayload>(&msg)) {
    ws.payload_bits = 32ull * d->data.size();
    ws.metadata_bits += 64;
  } else if (const auto* t = std::get_if<TopKPayload>(&msg)) {
    ws.payload_bits = (32ull + 32ull) * t->indices.size();
    ws.metadata_bits += 96;
  } else {
    const auto& lr = std::get<LowRankPayload>(msg);
    WireSize p = block_wire_size(lr.p);
    WireSize q = block_wire_size(lr.q);
    ws.payload_bits = p.payload_bits + q.payload_bits;
    ws.metadata_bits += p.metadata_bits + q.metadata_bits;
  }
  return ws;
}

std::vector<std::uint8_t> serialize(const CompressedMessage& msg) {
  std::vector<std::uint8_t> out;
  if (const auto* d = std::get_if<DensePayload>(&msg)) {
    append_le<std::uint8_t>(out, kTagDense);
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(d->data.rows()));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(d->data.cols()));
    for (double v : d->data.data()) append_le<float>(out, static_cast<float>(v));
  } else if (const auto* t = std::get_if<TopKPayload>(&msg)) {
    append_le<std::uint8_t>(out, kTagTopK);
    append_le<std::uint32_t>(out, t->rows);
    append_le<std::uint32_t>(out, t->cols);
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(t->indices.size()));
    for (std::uint32_t idx : t->indices) append_le<std::uint32_t>(out, idx);
    for (double v : t->values) append_le<float>(out, static_cast<float>(v));
  } else {
    const auto& lr = std::get<LowRankPayload>(msg);
    append_le<std::uint8_t>(out, kTagLowRank);
    append_block_bytes(lr.p, out);
    append_block_bytes(lr.q, out);
  }
  return out;
}

CompressedMessage deserialize(const std::vector<std::uint8_t>& bytes) {
  std::size_t offset = 0;
  std::uint8_t tag = read_le<std::uint8_t>(bytes, offset);
  if (tag == kTagDense) {
    std::uint32_t rows = read_le<std::uint32_t>(bytes, offset);
    std::uint32_t cols = read_le<std::uint32_t>(bytes, offset);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = static_cast<double>(read_le<float>(bytes, offset));
    return DensePayload{std::move(m)};
  }
  if (tag == kTagTopK) {
    TopKPayload t;
    t.rows = read_le<std::uint32_t>(bytes, offset);
    t.cols = read_le<std::uint32_t>(bytes, offset);
    std::uint32_t count = read_le<std::uint32_t>(bytes, offset);
    t.indices.resize(count);
    t.values.resize(count);
    for (auto& idx : t.indices) idx = read_le<std::uint32_t>(bytes, offset);
    for (auto& v : t.values) v = static_cast<double>(read_le<float>(bytes, offset));
    return t;
  }
  if (tag == kTagLowRank) {
    LowRankPayload lr;
    lr.p = parse_block_bytes(bytes, offset);
    lr.q = parse_block_bytes(bytes, offset);
    return lr;
  }
  throw FormatError("unknown message tag " + std::to_string(tag));
}

}  // namespace lqsgd
