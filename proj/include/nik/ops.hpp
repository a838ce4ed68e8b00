#pragma once

#include <vector>

#include "nik/tensor.hpp"

// Forward/backward op suite over TensorT. Every op validates shapes up
// front and, when a tape is active and any input requires a gradient,
// records a closure that accumulates (never overwrites) into the input
// gradient buffers.
//
// Broadcasting is deliberately narrow:
//   * scalar ops broadcast one constant over a tensor,
//   * add_bias broadcasts a trailing-axis vector over leading axes,
//   * mul_prefix/div_prefix broadcast a leading-shape tensor over
//     trailing axes (per-row scale, the transpose analog of add_bias),
//   * repeat_axis tiles a size-1 axis.
// Everything else requires exact shape agreement.

namespace nik {

// ---- elementwise, same shape ----
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> divide(const TensorT<T>& a, const TensorT<T>& b);

// ---- scalar broadcast ----
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T c);
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& a, T c);
template <typename T> TensorT<T> neg(const TensorT<T>& a);

// ---- elementwise functions ----
template <typename T> TensorT<T> square(const TensorT<T>& a);
template <typename T> TensorT<T> sqrt_(const TensorT<T>& a);    // a >= 0
template <typename T> TensorT<T> exp_(const TensorT<T>& a);
template <typename T> TensorT<T> log_(const TensorT<T>& a);     // a > 0
template <typename T> TensorT<T> acos_(const TensorT<T>& a);    // |a| <= 1, raises otherwise
template <typename T> TensorT<T> clamp(const TensorT<T>& a, T lo, T hi);  // zero grad outside (lo, hi)
// Smooth nonlinearity of the suite: exact GELU, x * Phi(x) with the
// Gaussian CDF via erf.
template <typename T> TensorT<T> gelu(const TensorT<T>& a);

// ---- structure ----
template <typename T> TensorT<T> reshape(const TensorT<T>& a, Shape shape);
template <typename T> TensorT<T> transpose_last(const TensorT<T>& a);  // swap last two axes
template <typename T> TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len);
template <typename T> TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);
// Tiles axis `axis` (which must have extent 1) to extent n; backward sums.
template <typename T> TensorT<T> repeat_axis(const TensorT<T>& a, int axis, int n);

// ---- reductions ----
template <typename T> TensorT<T> sum(const TensorT<T>& a);                // -> scalar
template <typename T> TensorT<T> mean(const TensorT<T>& a);               // -> scalar
template <typename T> TensorT<T> sum_axis(const TensorT<T>& a, int axis);   // axis removed
template <typename T> TensorT<T> mean_axis(const TensorT<T>& a, int axis);  // axis removed

// ---- linear algebra ----
// a: [..., m, k] @ b: [k, n] (shared rhs) or b: [..., k, n] with identical
// leading axes.
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// x: [..., n] + bias b: [n], broadcast over leading axes.
template <typename T> TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b);
// Affine map along the trailing axis: x [..., in] -> [..., out].
template <typename T> TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

// ---- prefix-shape scaling ----
// s.shape must be a prefix of x.shape; each trailing block x[i0,i1,...,:]
// is multiplied (divided) by the scalar s[i0,i1,...].
template <typename T> TensorT<T> mul_prefix(const TensorT<T>& x, const TensorT<T>& s);
template <typename T> TensorT<T> div_prefix(const TensorT<T>& x, const TensorT<T>& s);

// ---- normalizations ----
template <typename T> TensorT<T> softmax(const TensorT<T>& a, int axis);
// Layer normalization over the trailing (feature) axis with affine
// parameters gamma/beta of shape [features].
template <typename T> TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                                            const TensorT<T>& beta, T eps = T(1e-5));

}  // namespace nik
