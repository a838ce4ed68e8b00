#pragma once

#include <functional>
#include <vector>

#include "nik/tensor.hpp"

namespace nik {

// Compares reverse-mode gradients of the scalar function `f` against central
// finite differences over every coordinate of `inputs`. Returns the maximum
// of |analytic - numeric| / max(1, |analytic|, |numeric|).
//
// `f` must be a pure function of `inputs` (and of constants). Run in double
// precision; float finite differences are too noisy to be meaningful.
template <typename T>
T grad_check(const std::function<TensorT<T>()>& f, const std::vector<TensorT<T>>& inputs,
             T h = T(1e-6));

extern template float grad_check<float>(const std::function<TensorT<float>()>&,
                                        const std::vector<TensorT<float>>&, float);
extern template double grad_check<double>(const std::function<TensorT<double>()>&,
                                          const std::vector<TensorT<double>>&, double);

}  // namespace nik
