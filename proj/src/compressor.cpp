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

#include "lqsgd/compressor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lqsgd {

std::pair<Matrix, LayerShape> reshape_to_matrix(const Tensor& grad) {
  LayerShape shape;
  shape.original_dims = grad.dims;
  if (grad.dims.size() <= 1) {
    shape.pass_through = true;
    shape.rows = 1;
    shape.cols = grad.size();
  } else {
    shape.rows = grad.dims[0];
    shape.cols = 1;
    for (std::size_t i = 1; i < grad.dims.size(); ++i) shape.cols *= grad.dims[i];
  }
  Matrix m(shape.rows, shape.cols, grad.data);
  check_finite(m, "reshape_to_matrix");
  return {std::move(m), std::move(shape)};
}

Tensor matrix_to_tensor(const Matrix& m, const LayerShape& shape) {
  if (m.size() != std::size_t{shape.rows} * shape.cols) {
    throw ShapeError("matrix does not match layer shape");
  }
  Tensor t;
  t.dims = shape.original_dims;
  t.data.assign(m.data().begin(), m.data().end());
  return t;
}

CompressorState Compressor::make_state(std::size_t rows, std::size_t cols,
                                       std::size_t /*layer_index*/) const {
  CompressorState s;
  s.error = Matrix(rows, cols);
  return s;
}

CompressedMessage mean_decoded(std::span<const CompressedMessage> msgs) {
  if (msgs.empty()) throw ProtocolError("cannot aggregate zero messages");
  Matrix sum = decode(msgs[0]);
  for (std::size_t i = 1; i < msgs.size(); ++i) {
    sum += decode(msgs[i], sum.rows(), sum.cols());
  }
  sum *= 1.0 / static_cast<double>(msgs.size());
  return DensePayload{std::move(sum)};
}

CompressedMessage Compressor::aggregate(std::span<const CompressedMessage> msgs) const {
  return mean_decoded(msgs);
}

Matrix Compressor::finalize(const Matrix& grad, const CompressedMessage& aggregated,
                            CompressorState& state) const {
  Matrix ghat = decode(aggregated, grad.rows(), grad.cols());
  state.step += 1;
  return ghat;
}

// ---------------------------------------------------------------------------
// Identity

CompressedMessage IdentityCompressor::compress(const Matrix& grad,
                                               CompressorState& /*state*/) const {
  return DensePayload{grad};
}

// ---------------------------------------------------------------------------
// Top-k

TopKCompressor::TopKCompressor(double k_fraction) : k_fraction_(k_fraction) {
  if (!(k_fraction > 0.0) || k_fraction > 1.0) {
    throw ConfigError("top-k fraction must be in (0, 1]");
  }
}

CompressedMessage TopKCompressor::compress(const Matrix& grad,
                                           CompressorState& state) const {
  if (!grad.same_shape(state.error)) throw ShapeError("top-k state shape mismatch");
  Matrix compensated = grad;
  compensated += state.error;

  const std::size_t total = compensated.size();
  const std::size_t k = std::min<std::size_t>(
      total, static_cast<std::size_t>(
                 std::ceil(k_fraction_ * static_cast<double>(total))));

  std::vector<std::uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0u);
  // Full sort on (|value| desc, index asc): reproducible selection.
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    double fa = std::fabs(compensated.data()[a]);
    double fb = std::fabs(compensated.data()[b]);
    if (fa != fb) return fa > fb;
    return a < b;
  });

  TopKPayload payload;
  payload.rows = static_cast<std::uint32_t>(compensated.rows());
  payload.cols = static_cast<std::uint32_t>(compensated.cols());
  payload.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(payload.indices.begin(), payload.indices.end());
  payload.values.reserve(k);
  for (std::uint32_t idx : payload.indices) {
    payload.values.push_back(compensated.data()[idx]);
  }

  // Residual = unsent entries; sent entries leave no error.
  state.error = std::move(compensated);
  for (std::uint32_t idx : payload.indices) state.error.data()[idx] = 0.0;

  return payload;
}

Matrix TopKCompressor::finalize(const Matrix& grad, const CompressedMessage& aggregated,
                                CompressorState& state) const {
  // Error already updated at compress time against this worker's own message.
  Matrix ghat = decode(aggregated, grad.rows(), grad.cols());
  state.step += 1;
  return ghat;
}

// ---------------------------------------------------------------------------
// Low-rank power iteration (LQ-SGD and PowerSGD)

LowRankCompressor::LowRankCompressor(std::string name, int rank, QuantConfig quant_p,
                                     QuantConfig quant_q, std::uint64_t seed,
                                     bool error_feedback)
    : name_(std::move(name)),
      rank_(rank),
      quant_p_(quant_p),
      quant_q_(quant_q),
      seed_(seed),
      error_feedback_(error_feedback) {
  if (rank_ < 1) throw ConfigError("rank must be >= 1");
  quant_p_.validate();
  quant_q_.validate();
}

CompressorState LowRankCompressor::make_state(std::size_t rows, std::size_t cols,
                                              std::size_t /*layer_index*/) const {
  CompressorState s;
  s.error = Matrix(rows, cols);
  s.rank = static_cast<int>(std::min<std::size_t>(
      static_cast<std::size_t>(rank_), std::min(rows, cols)));
  s.quant_p = quant_p_;
  s.quant_q = quant_q_;
  return s;
}

Matrix LowRankCompressor::compensated(const Matrix& grad, const CompressorState& state) const {
  if (!grad.same_shape(state.error)) throw ShapeError("low-rank state shape mismatch");
  if (!error_feedback_) return grad;
  Matrix g = grad;
  g += state.error;
  return g;
}

CompressedMessage LowRankCompressor::compress(const Matrix& grad,
                                              CompressorState& state) const {
  const Matrix g = compensated(grad, state);
  const std::size_t r = static_cast<std::size_t>(state.rank);

  Matrix q_init;
  if (state.q_warm.has_value()) {
    q_init = *state.q_warm;
  } else {
    // All workers derive the same Q0 for a layer: the sketch must be shared
    // for the factor aggregation to be meaningful.
    SeededRng rng(seed_);
    q_init = gaussian_matrix(rng, grad.cols(), r);
  }

  Matrix p = orthonormalize(matmul(g, q_init));
  QuantizedBlock p_block = log_quantize(p, state.quant_p);
  Matrix p_hat = log_dequantize(p_block);
  // Q' against the dequantized P: workers compute with the values that
  // actually travel, matching the quantize -> all-reduce -> dequantize order.
  Matrix q_next = matmul(transpose(g), p_hat);
  QuantizedBlock q_block = log_quantize(q_next, state.quant_q);

  return LowRankPayload{std::move(p_block), std::move(q_block)};
}

CompressedMessage LowRankCompressor::aggregate(std::span<const CompressedMessage> msgs) const {
  if (msgs.empty()) throw ProtocolError("cannot aggregate zero messages");
  const auto* first = std::get_if<LowRankPayload>(&msgs[0]);
  if (first == nullptr) throw ProtocolError("low-rank aggregate on wrong variant");

  // All-reduce in the dequantized real domain: gather codes, dequantize,
  // mean in worker-index order. The result is the factor pair every worker
  // shares; it is carried losslessly because it never travels as payload.
  Matrix p_mean = log_dequantize(first->p);
  Matrix q_mean = log_dequantize(first->q);
  for (std::size_t i = 1; i < msgs.size(); ++i) {
    const auto* lr = std::get_if<LowRankPayload>(&msgs[i]);
    if (lr == nullptr) throw ProtocolError("mixed variants in low-rank aggregate");
    p_mean += log_dequantize(lr->p);
    q_mean += log_dequantize(lr->q);
  }
  const double inv = 1.0 / static_cast<double>(msgs.size());
  p_mean *= inv;
  q_mean *= inv;

  LowRankPayload out;
  out.p = log_quantize(p_mean, QuantConfig::raw64());
  out.q = log_quantize(q_mean, QuantConfig::raw64());
  return out;
}

Matrix LowRankCompressor::finalize(const Matrix& grad, const CompressedMessage& aggregated,
                                   CompressorState& state) const {
  const auto* lr = std::get_if<LowRankPayload>(&aggregated);
  if (lr == nullptr) {
    throw ProtocolError(std::string("low-rank finalize expects a low-rank message, got ") +
                        variant_name(aggregated));
  }
  if (lr->p.rows != grad.rows() || lr->q.rows != grad.cols()) {
    throw ProtocolError("aggregated factor dims do not match layer");
  }
  const Matrix g = compensated(grad, state);
  Matrix p_hat = log_dequantize(lr->p);
  Matrix q_hat = log_dequantize(lr->q);
  Matrix ghat = matmul(p_hat, transpose(q_hat));
  if (error_feedback_) {
    state.error = g;
    state.error -= ghat;
  }
  state.q_warm = std::move(q_hat);
  state.step += 1;
  return ghat;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Compressor> make_identity() { return std::make_unique<IdentityCompressor>(); }

std::unique_ptr<Compressor> make_topk(double k_fraction) {
  return std::make_unique<TopKCompressor>(k_fraction);
}

std::unique_ptr<Compressor> make_lqsgd(int rank, int bits, double alpha, std::uint64_t seed,
                                       bool error_feedback) {
  QuantConfig cfg = QuantConfig::packed(bits, alpha);
  if (bits == 64) cfg = QuantConfig::raw64();
  return std::make_unique<LowRankCompressor>("lqsgd", rank, cfg, cfg, seed, error_feedback);
}

std::unique_ptr<Compressor> make_powersgd(int rank, std::uint64_t seed, bool error_feedback) {
  return std::make_unique<LowRankCompressor>("powersgd", rank, QuantConfig::float32(),
                                             QuantConfig::float32(), seed, error_feedback);
}

std::unique_ptr<Compressor> make_lossless_lowrank(int rank, std::uint64_t seed,
                                                  bool error_feedback) {
  return std::make_unique<LowRankCompressor>("lossless", rank, QuantConfig::raw64(),
                                             QuantConfig::raw64(), seed, error_feedback);
}

}  // namespace lqsgd
