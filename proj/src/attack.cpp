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

#include "lqsgd/attack.hpp"

#include <algorithm>
#include <cmath>

#include "lqsgd/ssim.hpp"

namespace lqsgd {

namespace {

Dataset single_sample(const Matrix& image, int label, int classes) {
  Dataset ds;
  ds.classes = classes;
  ds.features = Matrix(1, image.size());
  std::copy(image.data().begin(), image.data().end(), ds.features.data().begin());
  ds.labels = {label};
  return ds;
}

double dot_flat(const ParamSet& a, const ParamSet& b) {
  double sum = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (std::size_t i = 0; i < a[l].tensor.data.size(); ++i) {
      sum += a[l].tensor.data[i] * b[l].tensor.data[i];
    }
  }
  return sum;
}

double norm_flat(const ParamSet& a) { return std::sqrt(dot_flat(a, a)); }

Matrix tv_subgradient(const Matrix& x) {
  Matrix g(x.rows(), x.cols());
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j + 1 < x.cols(); ++j) {
      double s = sgn(x(i, j + 1) - x(i, j));
      g(i, j + 1) += s;
      g(i, j) -= s;
    }
  }
  for (std::size_t i = 0; i + 1 < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double s = sgn(x(i + 1, j) - x(i, j));
      g(i + 1, j) += s;
      g(i, j) -= s;
    }
  }
  return g;
}

void clamp01(Matrix& x) {
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
}

// Closed-form objective and gradient for the softmax-linear model. With
// s = softmax(Wx+b) - e_y the flattened gradient is u = [s x^T | s], so
//   <u, g>  = s^T (Gw x + gb)
//   ||u||   = ||s|| sqrt(||x||^2 + 1)
// and ds/dx = (diag(p) - p p^T) W.
class LinearInversion {
 public:
  LinearInversion(const SoftmaxLinearModel& model, const ParamSet& params,
                  const ParamSet& observed, int label, double tv_weight)
      : model_(model),
        params_(params),
        observed_(observed),
        label_(label),
        tv_weight_(tv_weight) {
    observed_norm_ = norm_flat(observed);
  }

  double value(const Matrix& x) const {
    double cos = cosine(x, nullptr);
    return 1.0 - cos + tv_weight_ * total_variation(x);
  }

  Matrix gradient(const Matrix& x) const {
    Matrix g(x.rows(), x.cols());
    cosine(x, &g);      // writes -d(cos)/dx
    if (tv_weight_ > 0.0) {
      Matrix tv = tv_subgradient(x);
      tv *= tv_weight_;
      g += tv;
    }
    return g;
  }

 private:
  // Returns the cosine; when grad_out is non-null adds -d(cos)/dx into it.
  double cosine(const Matrix& x, Matrix* grad_out) const {
    const std::size_t d = model_.input_dim();
    const int classes = model_.classes();
    const auto& w = params_[0].tensor.data;
    const auto& b = params_[1].tensor.data;
    const auto& gw = observed_[0].tensor.data;
    const auto& gb = observed_[1].tensor.data;

    std::vector<double> p(static_cast<std::size_t>(classes));
    for (std::size_t c = 0; c < p.size(); ++c) {
      double z = b[c];
      const double* row = &w[c * d];
      for (std::size_t j = 0; j < d; ++j) z += row[j] * x.data()[j];
      p[c] = z;
    }
    softmax_inplace(p);
    std::vector<double> s = p;
    s[static_cast<std::size_t>(label_)] -= 1.0;

    double s_norm2 = 0.0;
    for (double v : s) s_norm2 += v * v;
    double x_norm2 = 0.0;
    for (double v : x.data()) x_norm2 += v * v;
    const double u_norm = std::sqrt(s_norm2) * std::sqrt(x_norm2 + 1.0);
    if (u_norm == 0.0 || observed_norm_ == 0.0) {
      return 0.0;  // objective 1 + lambda TV; cosine gradient undefined -> 0
    }

    // gwx[c] = (Gw x)[c] + gb[c]
    std::vector<double> gwx(p.size());
    for (std::size_t c = 0; c < p.size(); ++c) {
      double acc = gb[c];
      const double* row = &gw[c * d];
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * x.data()[j];
      gwx[c] = acc;
    }
    double ip = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) ip += s[c] * gwx[c];
    const double cos = ip / (u_norm * observed_norm_);

    if (grad_out != nullptr) {
      // a = A^T v terms with A = (diag(p) - p p^T) W: A^T v = W^T (diag(p)v - (p.v) p)
      auto at_times = [&](const std::vector<double>& v, std::vector<double>& out) {
        double pv = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) pv += p[c] * v[c];
        std::vector<double> t(p.size());
        for (std::size_t c = 0; c < p.size(); ++c) t[c] = p[c] * v[c] - pv * p[c];
        out.assign(d, 0.0);
        for (std::size_t c = 0; c < p.size(); ++c) {
          const double* row = &w[c * d];
          for (std::size_t j = 0; j < d; ++j) out[j] += row[j] * t[c];
        }
      };
      std::vector<double> d_ip(d, 0.0);
      at_times(gwx, d_ip);  // A^T (Gw x + gb)
      for (std::size_t c = 0; c < p.size(); ++c) {
        const double* row = &gw[c * d];
        for (std::size_t j = 0; j < d; ++j) d_ip[j] += row[j] * s[c];  // Gw^T s
      }
      std::vector<double> ats(d, 0.0);
      at_times(s, ats);
      const double s_norm = std::sqrt(s_norm2);
      const double m = std::sqrt(x_norm2 + 1.0);
      // d||u||/dx = m/||s|| A^T s + ||s||/m x
      for (std::size_t j = 0; j < d; ++j) {
        double d_norm = (m / s_norm) * ats[j] + (s_norm / m) * x.data()[j];
        double d_cos =
            d_ip[j] / (u_norm * observed_norm_) - ip * d_norm / (u_norm * u_norm * observed_norm_);
        grad_out->data()[j] += -d_cos;
      }
    }
    return cos;
  }

  const SoftmaxLinearModel& model_;
  const ParamSet& params_;
  const ParamSet& observed_;
  int label_;
  double tv_weight_;
  double observed_norm_;
};

}  // namespace

double total_variation(const Matrix& image) {
  double tv = 0.0;
  for (std::size_t i = 0; i < image.rows(); ++i) {
    for (std::size_t j = 0; j + 1 < image.cols(); ++j) {
      tv += std::fabs(image(i, j + 1) - image(i, j));
    }
  }
  for (std::size_t i = 0; i + 1 < image.rows(); ++i) {
    for (std::size_t j = 0; j < image.cols(); ++j) {
      tv += std::fabs(image(i + 1, j) - image(i, j));
    }
  }
  return tv;
}

double inversion_objective(const Matrix& image, int label, const ParamSet& model_params,
                           const ParamSet& observed, const Model& model, double tv_weight) {
  Dataset ds = single_sample(image, label, static_cast<int>(observed.back().tensor.size()));
  const std::size_t batch[] = {0};
  ParamSet grads = model.gradient(model_params, ds, batch);
  if (grads.size() != observed.size()) {
    throw ShapeError("observed gradients do not match the model layout");
  }
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (grads[l].tensor.data.size() != observed[l].tensor.data.size()) {
      throw ShapeError("observed gradient dims mismatch at layer " + grads[l].name);
    }
  }
  double gn = norm_flat(grads);
  double on = norm_flat(observed);
  double cos = 0.0;
  if (gn > 0.0 && on > 0.0) cos = dot_flat(grads, observed) / (gn * on);
  return 1.0 - cos + tv_weight * total_variation(image);
}

namespace {

// Shared descent loop; value/grad supplied by the caller.
template <typename ValueFn, typename GradFn>
AttackResult descend(const ValueFn& value, const GradFn& grad, const Matrix& reference,
                     const AttackConfig& cfg) {
  AttackResult best;
  bool have_best = false;
  for (int restart = 0; restart < cfg.restarts; ++restart) {
    SeededRng rng(derive_seed(cfg.seed, purpose_tag("attack"),
                              static_cast<std::uint64_t>(restart)));
    Matrix x(cfg.height, cfg.width);
    for (double& v : x.data()) v = 0.5 + 0.4 * (rng.uniform() - 0.5);
    double f = value(x);
    double step = cfg.step_size;
    for (int it = 0; it < cfg.steps; ++it) {
      Matrix g = grad(x);
      bool improved = false;
      while (step >= 1e-12) {
        Matrix trial = x;
        Matrix delta = g;
        delta *= step;
        trial -= delta;
        clamp01(trial);
        double ft = value(trial);
        if (ft < f) {
          x = std::move(trial);
          f = ft;
          step = std::min(step * 1.3, 1e3);
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;  // stationary under backtracking
    }
    if (!have_best || f < best.objective) {
      best.objective = f;
      best.reconstruction = std::move(x);
      have_best = true;
    }
  }
  best.ssim = ssim(best.reconstruction, reference);
  return best;
}

}  // namespace

double linear_inversion_objective(const SoftmaxLinearModel& model, const ParamSet& params,
                                  const ParamSet& observed, int label, double tv_weight,
                                  const Matrix& image, Matrix* grad_out) {
  LinearInversion inv(model, params, observed, label, tv_weight);
  if (grad_out != nullptr) *grad_out = inv.gradient(image);
  return inv.value(image);
}

AttackResult run_attack(const ParamSet& observed, int label, const Model& model,
                        const ParamSet& model_params, const Matrix& reference,
                        const AttackConfig& cfg) {
  if (const auto* linear = dynamic_cast<const SoftmaxLinearModel*>(&model)) {
    if (cfg.height * cfg.width != linear->input_dim()) {
      throw ConfigError("attack image dims do not match model input");
    }
    LinearInversion inv(*linear, model_params, observed, label, cfg.tv_weight);
    return descend([&](const Matrix& x) { return inv.value(x); },
                   [&](const Matrix& x) { return inv.gradient(x); }, reference, cfg);
  }

  if (cfg.height * cfg.width > 256) {
    throw ConfigError("finite-difference attack capped at 16x16 images");
  }
  const double h = 1e-3;
  auto value = [&](const Matrix& x) {
    return inversion_objective(x, label, model_params, observed, model, cfg.tv_weight);
  };
  auto grad = [&](const Matrix& x) {
    Matrix g(x.rows(), x.cols());
    Matrix probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double orig = probe.data()[i];
      probe.data()[i] = orig + h;
      double plus = value(probe);
      probe.data()[i] = orig - h;
      double minus = value(probe);
      probe.data()[i] = orig;
      g.data()[i] = (plus - minus) / (2.0 * h);
    }
    return g;
  };
  return descend(value, grad, reference, cfg);
}

ParamSet observed_gradients(const Model& model, const ParamSet& params, const Matrix& image,
                            int label, const CompressorSpec& spec, std::uint64_t master_seed) {
  int classes = static_cast<int>(params.back().tensor.size());
  Dataset ds = single_sample(image, label, classes);
  const std::size_t batch[] = {0};
  ParamSet grads = model.gradient(params, ds, batch);
  auto compressor = make_compressor(spec, master_seed);
  ParamSet out;
  out.reserve(grads.size());
  for (std::size_t l = 0; l < grads.size(); ++l) {
    auto [gmat, shape] = reshape_to_matrix(grads[l].tensor);
    NamedTensor seen;
    seen.name = grads[l].name;
    if (shape.pass_through) {
      seen.tensor = grads[l].tensor;
    } else {
      CompressorState state = compressor->make_state(shape.rows, shape.cols, l);
      CompressedMessage msg = compressor->compress(gmat, state);
      seen.tensor = matrix_to_tensor(decode(msg), shape);
    }
    out.push_back(std::move(seen));
  }
  return out;
}

Matrix synthetic_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  SeededRng rng(seed);
  Matrix img(height, width);
  const int bumps = 3;
  for (int k = 0; k < bumps; ++k) {
    double cy = rng.uniform(0.0, static_cast<double>(height));
    double cx = rng.uniform(0.0, static_cast<double>(width));
    double sigma = rng.uniform(static_cast<double>(height) / 4.0,
                               static_cast<double>(height) / 1.5);
    double amp = rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        double dy = (static_cast<double>(i) - cy) / sigma;
        double dx = (static_cast<double>(j) - cx) / sigma;
        img(i, j) += amp * std::exp(-0.5 * (dx * dx + dy * dy));
      }
    }
  }
  double lo = *std::min_element(img.data().begin(), img.data().end());
  double hi = *std::max_element(img.data().begin(), img.data().end());
  if (hi - lo < 1e-12) {
    for (double& v : img.data()) v = 0.5;
  } else {
    for (double& v : img.data()) v = (v - lo) / (hi - lo);
  }
  return img;
}

}  // namespace lqsgd
