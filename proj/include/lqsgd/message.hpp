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
#include <variant>
#include <vector>

#include "lqsgd/matrix.hpp"
#include "lqsgd/quantize.hpp"

namespace lqsgd {

/// Full-precision gradient, transmitted at 32-bit-per-entry accounting.
struct DensePayload {
  Matrix data;
};

/// Largest-magnitude entries as (flat row-major index, value) pairs.
struct TopKPayload {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint32_t> indices;  // ascending flat indices
  std::vector<double> values;          // float32 on the wire
};

/// Low-rank factor pair: P (n x r) and Q (m x r), each a QuantizedBlock.
struct LowRankPayload {
  QuantizedBlock p;
  QuantizedBlock q;
};

/// The unit of worker-to-worker communication. Every variant is
/// self-describing and decodes to a dense (n x m) matrix.
///
/// Serialized layout: a 1-byte variant tag (0 dense, 1 top-k, 2 low-rank),
/// then the variant body, everything little-endian:
///   dense:    rows:u32 | cols:u32 | rows*cols float32 values
///   top-k:    rows:u32 | cols:u32 | count:u32 | count u32 indices
///             | count float32 values
///   low-rank: QuantizedBlock P | QuantizedBlock Q (see quantize.hpp)
using CompressedMessage = std::variant<DensePayload, TopKPayload, LowRankPayload>;

const char* variant_name(const CompressedMessage& msg);

std::size_t message_rows(const CompressedMessage& msg);
std::size_t message_cols(const CompressedMessage& msg);

/// Dense reconstruction of the message contents.
Matrix decode(const CompressedMessage& msg);

/// Shape-checked decode; throws FormatError when the message does not
/// describe an (rows x cols) matrix.
Matrix decode(const CompressedMessage& msg, std::size_t rows, std::size_t cols);

/// Payload/metadata accounting of the serialized form. Payload covers code
/// bits, dense/top-k values and top-k indices; the variant tag, dims,
/// counts, block headers and bit padding are metadata.
WireSize message_wire_size(const CompressedMessage& msg);

std::vector<std::uint8_t> serialize(const CompressedMessage& msg);
CompressedMessage deserialize(const std::vector<std::uint8_t>& bytes);

}  // namespace lqsgd
