// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Tanh-form GELU, 0.5 x (1 + tanh(c (x + 0.044715 x^3))), with tanh written
// through exp so Eigen vectorizes it.

#ifndef DLM_SRC_GELU_H_
#define DLM_SRC_GELU_H_

#include <cmath>
#include <numbers>

#include "dlm/model.h"

namespace dlm::internal {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluA = 0.044715;

inline Eigen::ArrayXXd gelu_tanh(const Mat& u) {
  const auto x = u.array();
  const Eigen::ArrayXXd e = (2.0 * kGeluC * (x + kGeluA * x.cube())).exp();
  return 1.0 - 2.0 / (e + 1.0);
}

inline void gelu(const Mat& u, Mat& g) {
  g = (0.5 * u.array() * (1.0 + gelu_tanh(u))).matrix();
}

// d gelu / d u, elementwise.
inline Mat gelu_grad(const Mat& u) {
  const auto x = u.array();
  const Eigen::ArrayXXd t = gelu_tanh(u);
  return (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * kGeluC * (1.0 + 3.0 * kGeluA * x.square()))
      .matrix();
}

}  // namespace dlm::internal

#endif  // DLM_SRC_GELU_H_
