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

#include <cmath>
#include <cstdint>
#include <vector>

#include "lqsgd/error.hpp"
#include "lqsgd/matrix.hpp"

namespace lqsgd {

/// Quantizer configuration.
///
/// bits selects the codec:
///   2..16  logarithmic codec, 1 sign bit + (bits-1) magnitude bits per
///          scalar, packed into the code stream;
///   32     values rounded to IEEE float32 and carried at 32 bits per
///          scalar (the PowerSGD factor wire format, no log mapping);
///   64     raw float64 passthrough, used by tests and by factor-domain
///          aggregation where no loss is acceptable.
/// alpha is the curvature of the log mapping; unused by the 32/64 modes.
struct QuantConfig {
  int bits = 8;
  double alpha = 1.0;

  static QuantConfig packed(int bits, double alpha) { return {bits, alpha}; }
  static QuantConfig float32() { return {32, 0.0}; }
  static QuantConfig raw64() { return {64, 0.0}; }

  bool is_packed() const { return bits >= 2 && bits <= 16; }
  /// Magnitude levels of the packed codec: 2^(bits-1).
  std::int64_t levels() const { return std::int64_t{1} << (bits - 1); }
  void validate() const;

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// One quantized matrix, decodable with no side information.
///
/// Serialized layout (little-endian, the unit of communication accounting):
///   rows:u32 | cols:u32 | bits:u8 | alpha:f64 | scale:f64 | code stream
/// For bits in 2..16 the code stream holds rows*cols codes of `bits` bits
/// each, row-major, sign bit first then magnitude bits (most significant
/// first), bytes filled from the high bit down and zero-padded to a byte
/// boundary. bits=32 streams raw float32 values, bits=64 raw float64.
struct QuantizedBlock {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  QuantConfig config;
  double scale = 0.0;                // per-block max-abs normalizer
  std::vector<std::uint8_t> codes;   // packed stream (bits <= 16)
  std::vector<double> raw;           // float32/raw64 values

  std::size_t count() const { return std::size_t{rows} * cols; }
};

/// Continuous log mapping of Eq. (5) restricted to t in [0,1]:
/// log(1 + alpha*t) / log(1 + alpha).
inline double log_map(double t, double alpha) {
  return std::log1p(alpha * t) / std::log1p(alpha);
}

/// Inverse mapping of Eq. (6): ((1+alpha)^u - 1) / alpha.
inline double exp_map(double u, double alpha) {
  return std::expm1(u * std::log1p(alpha)) / alpha;
}

/// Quantizes a matrix: normalize by the block max-abs, apply the log map,
/// snap magnitudes to the 2^(bits-1) uniform levels {0, 1/(L-1), ..., 1}
/// (ties round half away from zero), store the sign in its own bit.
/// Throws DataError on non-finite input.
QuantizedBlock log_quantize(const Matrix& m, const QuantConfig& cfg);

/// Reconstructs the dense matrix: level -> exp_map(level/(L-1)) * scale with
/// the stored sign. Throws FormatError if the code stream length is wrong.
Matrix log_dequantize(const QuantizedBlock& q);

struct WireSize {
  std::uint64_t payload_bits = 0;
  std::uint64_t metadata_bits = 0;
  std::uint64_t total_bits() const { return payload_bits + metadata_bits; }
};

/// Fixed per-block header: rows + cols + bits + alpha + scale.
constexpr std::uint64_t kBlockHeaderBits = 32 + 32 + 8 + 64 + 64;

/// Cost-model size of one block: payload = rows*cols*bits, metadata = the
/// fixed header. Matches the serialized byte stream exactly except that
/// byte-boundary padding of packed streams is counted as metadata.
WireSize wire_size_bits(std::uint32_t rows, std::uint32_t cols, const QuantConfig& cfg);

/// Measured sizes of a concrete block, padding included in metadata.
WireSize block_wire_size(const QuantizedBlock& q);

void append_block_bytes(const QuantizedBlock& q, std::vector<std::uint8_t>& out);
QuantizedBlock parse_block_bytes(const std::vector<std::uint8_t>& bytes, std::size_t& offset);

}  // namespace lqsgd
