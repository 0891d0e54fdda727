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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lqsgd/matrix.hpp"
#include "lqsgd/message.hpp"
#include "lqsgd/rng.hpp"

namespace lqsgd {

/// A parameter tensor as seen at the compression boundary.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }
};

/// How a layer's tensor maps onto the compression matrix. 1-D tensors are
/// flagged pass-through and always travel dense; k-D tensors (k >= 3) fold
/// trailing dims, so an (a, b, c, d) kernel becomes a x (b*c*d).
struct LayerShape {
  std::vector<std::size_t> original_dims;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool pass_through = false;
};

std::pair<Matrix, LayerShape> reshape_to_matrix(const Tensor& grad);
Tensor matrix_to_tensor(const Matrix& m, const LayerShape& shape);

/// Per-layer, per-worker persistent compressor state. Never shared.
struct CompressorState {
  std::optional<Matrix> q_warm;  // (m x r), absent before the first step
  Matrix error;                  // accumulated residual E, (n x m)
  int rank = 1;
  QuantConfig quant_p;
  QuantConfig quant_q;
  long step = 0;
};

/// Gradient compressor lifecycle. Per layer and step the harness runs
/// compress -> aggregate (at the collective root) -> finalize, in that
/// order. compress is pure for the low-rank methods; top-k folds its
/// residual into the state at compress time because the unsent entries
/// are known there.
class Compressor {
 public:
  virtual ~Compressor() = default;

  virtual const char* name() const = 0;

  virtual CompressorState make_state(std::size_t rows, std::size_t cols,
                                     std::size_t layer_index) const;

  virtual CompressedMessage compress(const Matrix& grad, CompressorState& state) const = 0;

  /// Deterministic reduction of the N worker messages into the one message
  /// every worker consumes. Default: mean of the decoded matrices, emitted
  /// dense. Messages are reduced in worker-index order.
  virtual CompressedMessage aggregate(std::span<const CompressedMessage> msgs) const;

  /// Applies the aggregated message: updates error feedback state and
  /// returns the reconstruction used for the parameter update.
  virtual Matrix finalize(const Matrix& grad, const CompressedMessage& aggregated,
                          CompressorState& state) const;
};

/// Original SGD baseline: dense passthrough, error state stays zero.
class IdentityCompressor final : public Compressor {
 public:
  const char* name() const override { return "identity"; }
  CompressedMessage compress(const Matrix& grad, CompressorState& state) const override;
};

/// Magnitude top-k sparsification with error feedback. Keeps the
/// ceil(k_fraction * n * m) entries of g + E largest by |value|; ties break
/// to the lowest flat index. The residual accumulates into the state at
/// compress time.
class TopKCompressor final : public Compressor {
 public:
  explicit TopKCompressor(double k_fraction);
  const char* name() const override { return "topk"; }
  CompressedMessage compress(const Matrix& grad, CompressorState& state) const override;
  Matrix finalize(const Matrix& grad, const CompressedMessage& aggregated,
                  CompressorState& state) const override;

  double k_fraction() const { return k_fraction_; }

 private:
  double k_fraction_;
};

/// Rank-r power-iteration compressor with warm start and error feedback.
/// One power iteration per step: P = orthonormalize((g+E) Q), quantize P,
/// Q' = (g+E)^T dequant(P), quantize Q'. With packed quantizer configs this
/// is the low-rank + log-quantization method; with float32 configs it is
/// the PowerSGD baseline.
class LowRankCompressor final : public Compressor {
 public:
  LowRankCompressor(std::string name, int rank, QuantConfig quant_p, QuantConfig quant_q,
                    std::uint64_t seed, bool error_feedback = true);

  const char* name() const override { return name_.c_str(); }
  CompressorState make_state(std::size_t rows, std::size_t cols,
                             std::size_t layer_index) const override;
  CompressedMessage compress(const Matrix& grad, CompressorState& state) const override;
  /// Mean of the dequantized factors across workers, carried losslessly.
  CompressedMessage aggregate(std::span<const CompressedMessage> msgs) const override;
  Matrix finalize(const Matrix& grad, const CompressedMessage& aggregated,
                  CompressorState& state) const override;

  int rank() const { return rank_; }
  bool error_feedback() const { return error_feedback_; }

 private:
  Matrix compensated(const Matrix& grad, const CompressorState& state) const;

  std::string name_;
  int rank_;
  QuantConfig quant_p_;
  QuantConfig quant_q_;
  std::uint64_t seed_;
  bool error_feedback_;
};

std::unique_ptr<Compressor> make_identity();
std::unique_ptr<Compressor> make_topk(double k_fraction);
std::unique_ptr<Compressor> make_lqsgd(int rank, int bits, double alpha,
                                       std::uint64_t seed, bool error_feedback = true);
std::unique_ptr<Compressor> make_powersgd(int rank, std::uint64_t seed,
                                          bool error_feedback = true);
/// Float64 factor passthrough; isolates the power-iteration path in tests.
std::unique_ptr<Compressor> make_lossless_lowrank(int rank, std::uint64_t seed,
                                                  bool error_feedback = true);

/// Default reducer: mean of decoded matrices in worker-index order.
CompressedMessage mean_decoded(std::span<const CompressedMessage> msgs);

}  // namespace lqsgd
