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

#include "lqsgd/ssim.hpp"

#include <algorithm>

namespace lqsgd {

double ssim(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("ssim: image dims differ");
  if (a.empty()) throw ShapeError("ssim: empty image");

  constexpr double kC1 = 0.01 * 0.01;  // (0.01 * L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;
  const std::size_t wh = std::min<std::size_t>(8, a.rows());
  const std::size_t ww = std::min<std::size_t>(8, a.cols());
  const double inv_n = 1.0 / static_cast<double>(wh * ww);

  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t i = 0; i + wh <= a.rows(); ++i) {
    for (std::size_t j = 0; j + ww <= a.cols(); ++j) {
      double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (std::size_t r = 0; r < wh; ++r) {
        for (std::size_t c = 0; c < ww; ++c) {
          double va = a(i + r, j + c);
          double vb = b(i + r, j + c);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      double mu_a = sa * inv_n;
      double mu_b = sb * inv_n;
      double var_a = saa * inv_n - mu_a * mu_a;
      double var_b = sbb * inv_n - mu_b * mu_b;
      double cov = sab * inv_n - mu_a * mu_b;
      double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
      double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
      total += num / den;
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

}  // namespace lqsgd
