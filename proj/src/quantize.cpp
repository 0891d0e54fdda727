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

#include "lqsgd/quantize.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace lqsgd {

void QuantConfig::validate() const {
  if (!(bits >= 2 && bits <= 16) && bits != 32 && bits != 64) {
    throw ConfigError("quantizer bits must be in [2,16], 32 or 64; got " +
                      std::to_string(bits));
  }
  if (is_packed() && !(alpha > 0.0)) {
    throw ConfigError("quantizer alpha must be positive");
  }
}

namespace {

// MSB-first bit cursor over a byte vector.
class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t value, int nbits) {
    for (int b = nbits - 1; b >= 0; --b) {
      if (bit_ == 0) out_.push_back(0);
      if ((value >> b) & 1u) out_.back() |= static_cast<std::uint8_t>(0x80u >> bit_);
      bit_ = (bit_ + 1) & 7;
    }
  }

 private:
  std::vector<std::uint8_t>& out_;
  int bit_ = 0;
};

class BitReader {
 public:
  BitReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t get(int nbits) {
    std::uint32_t v = 0;
    for (int b = 0; b < nbits; ++b) {
      std::size_t byte = pos_ >> 3;
      if (byte >= size_) throw FormatError("quantized code stream truncated");
      int off = static_cast<int>(pos_ & 7);
      v = (v << 1) | ((data_[byte] >> (7 - off)) & 1u);
      ++pos_;
    }
    return v;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T read_le(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  if (offset + sizeof(T) > bytes.size()) throw FormatError("block header truncated");
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

std::size_t packed_stream_bytes(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

}  // namespace

QuantizedBlock log_quantize(const Matrix& m, const QuantConfig& cfg) {
  cfg.validate();
  check_finite(m, "log_quantize");

  QuantizedBlock blk;
  blk.rows = static_cast<std::uint32_t>(m.rows());
  blk.cols = static_cast<std::uint32_t>(m.cols());
  blk.config = cfg;

  double scale = 0.0;
  for (double v : m.data()) scale = std::max(scale, std::fabs(v));
  blk.scale = scale;

  if (cfg.bits == 64) {
    blk.raw.assign(m.data().begin(), m.data().end());
    return blk;
  }
  if (cfg.bits == 32) {
    blk.raw.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      blk.raw[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    }
    return blk;
  }

  const std::int64_t max_level = cfg.levels() - 1;
  blk.codes.reserve(packed_stream_bytes(m.size(), cfg.bits));
  BitWriter writer(blk.codes);
  for (double v : m.data()) {
    std::uint32_t sign = std::signbit(v) ? 1u : 0u;
    std::int64_t level = 0;
    if (scale > 0.0) {
      double t = std::fabs(v) / scale;
      double u = log_map(t, cfg.alpha);
      level = std::llround(u * static_cast<double>(max_level));
      level = std::clamp<std::int64_t>(level, 0, max_level);
    }
    writer.put(sign, 1);
    writer.put(static_cast<std::uint32_t>(level), cfg.bits - 1);
  }
  blk.codes.resize(packed_stream_bytes(m.size(), cfg.bits));
  return blk;
}

Matrix log_dequantize(const QuantizedBlock& q) {
  q.config.validate();
  Matrix m(q.rows, q.cols);

  if (!q.config.is_packed()) {
    if (q.raw.size() != q.count()) {
      throw FormatError("raw block length mismatch");
    }
    std::copy(q.raw.begin(), q.raw.end(), m.data().begin());
    return m;
  }

  if (q.codes.size() != packed_stream_bytes(q.count(), q.config.bits)) {
    throw FormatError("packed block has " + std::to_string(q.codes.size()) +
                      " bytes, expected " +
                      std::to_string(packed_stream_bytes(q.count(), q.config.bits)));
  }
  const double max_level = static_cast<double>(q.config.levels() - 1);
  BitReader reader(q.codes.data(), q.codes.size());
  for (double& out : m.data()) {
    std::uint32_t sign = reader.get(1);
    std::uint32_t level = reader.get(q.config.bits - 1);
    double mag = 0.0;
    if (q.scale > 0.0 && level > 0) {
      double u = static_cast<double>(level) / max_level;
      mag = exp_map(u, q.config.alpha) * q.scale;
    }
    out = sign ? -mag : mag;
  }
  return m;
}

WireSize wire_size_bits(std::uint32_t rows, std::uint32_t cols, const QuantConfig& cfg) {
  cfg.validate();
  WireSize ws;
  ws.payload_bits = std::uint64_t{rows} * cols * static_cast<std::uint64_t>(cfg.bits);
  ws.metadata_bits = kBlockHeaderBits;
  return ws;
}

WireSize block_wire_size(const QuantizedBlock& q) {
  WireSize ws = wire_size_bits(q.rows, q.cols, q.config);
  if (q.config.is_packed()) {
    std::uint64_t stream_bits = 8ull * packed_stream_bytes(q.count(), q.config.bits);
    ws.metadata_bits += stream_bits - ws.payload_bits;  // byte padding
  }
  return ws;
}

void append_block_bytes(const QuantizedBlock& q, std::vector<std::uint8_t>& out) {
  append_le<std::uint32_t>(out, q.rows);
  append_le<std::uint32_t>(out, q.cols);
  append_le<std::uint8_t>(out, static_cast<std::uint8_t>(q.config.bits));
  append_le<double>(out, q.config.alpha);
  append_le<double>(out, q.scale);
  if (q.config.bits == 64) {
    for (double v : q.raw) append_le<double>(out, v);
  } else if (q.config.bits == 32) {
    for (double v : q.raw) append_le<float>(out, static_cast<float>(v));
  } else {
    out.insert(out.end(), q.codes.begin(), q.codes.end());
  }
}

QuantizedBlock parse_block_bytes(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  QuantizedBlock q;
  q.rows = read_le<std::uint32_t>(bytes, offset);
  q.cols = read_le<std::uint32_t>(bytes, offset);
  q.config.bits = read_le<std::uint8_t>(bytes, offset);
  q.config.alpha = read_le<double>(bytes, offset);
  q.scale = read_le<double>(bytes, offset);
  q.config.validate();
  if (q.config.bits == 64) {
    q.raw.resize(q.count());
    for (double& v : q.raw) v = read_le<double>(bytes, offset);
  } else if (q.config.bits == 32) {
    q.raw.resize(q.count());
    for (double& v : q.raw) v = static_cast<double>(read_le<float>(bytes, offset));
  } else {
    std::size_t n = packed_stream_bytes(q.count(), q.config.bits);
    if (offset + n > bytes.size()) throw FormatError("packed stream truncated");
    q.codes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                   bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));
    offset += n;
  }
  return q;
}

}  // namespace lqsgd
