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

#include "lqsgd/matrix.hpp"

namespace lqsgd {

/// Mean local structural similarity over 8x8 uniform windows at stride 1,
/// with C1 = (0.01*L)^2, C2 = (0.03*L)^2 for dynamic range L = 1. Images
/// smaller than the window use a window clamped to the image. Values are
/// expected in [0, 1]; dims must match.
double ssim(const Matrix& a, const Matrix& b);

}  // namespace lqsgd
