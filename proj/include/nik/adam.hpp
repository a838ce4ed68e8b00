#pragma once

#include <cstdint>
#include <vector>

#include "nik/tensor.hpp"

namespace nik {

template <typename T>
struct AdamConfigT {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

// Bias-corrected Adam over a fixed parameter list. Moment accumulators are
// owned here and shaped like their parameters; the step counter only grows.
template <typename T>
class AdamT {
public:
    explicit AdamT(std::vector<TensorT<T>> params, AdamConfigT<T> cfg = {});

    // Applies one update in place, reading each parameter's grad buffer.
    void step(T lr);
    void zero_grad();
    int64_t step_count() const { return t_; }
    const std::vector<TensorT<T>>& params() const { return params_; }

private:
    std::vector<TensorT<T>> params_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    AdamConfigT<T> cfg_;
    int64_t t_ = 0;
};

using Adam = AdamT<double>;

extern template class AdamT<float>;
extern template class AdamT<double>;

}  // namespace nik
