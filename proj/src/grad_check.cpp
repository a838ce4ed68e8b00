#include "nik/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace nik {

template <typename T>
T grad_check(const std::function<TensorT<T>()>& f, const std::vector<TensorT<T>>& inputs,
             T h) {
    std::vector<bool> had_grad_flag;
    had_grad_flag.reserve(inputs.size());
    for (auto input : inputs) {
        had_grad_flag.push_back(input.requires_grad());
        input.set_requires_grad(true);
        input.zero_grad();
    }

    std::vector<std::vector<T>> analytic;
    {
        TapeT<T> tape;
        TapeScopeT<T> scope(tape);
        TensorT<T> out = f();
        if (out.numel() != 1)
            throw ContractViolation("grad_check: f must return a scalar, got shape " +
                                    shape_str(out.shape()));
        tape.backward(out);
        for (const auto& input : inputs) analytic.push_back(input.grad());
    }

    T max_err = T(0);
    {
        TapeScopeT<T> no_tape(nullptr);
        for (size_t pi = 0; pi < inputs.size(); ++pi) {
            auto input = inputs[pi];
            auto& x = input.data();
            for (size_t i = 0; i < x.size(); ++i) {
                const T saved = x[i];
                x[i] = saved + h;
                const T f_plus = f().item();
                x[i] = saved - h;
                const T f_minus = f().item();
                x[i] = saved;
                const T numeric = (f_plus - f_minus) / (T(2) * h);
                const T a = analytic[pi][i];
                const T denom = std::max(T(1), std::max(std::abs(a), std::abs(numeric)));
                max_err = std::max(max_err, std::abs(a - numeric) / denom);
            }
        }
    }

    for (size_t pi = 0; pi < inputs.size(); ++pi) {
        auto input = inputs[pi];
        input.set_requires_grad(had_grad_flag[pi]);
    }
    return max_err;
}

template float grad_check<float>(const std::function<TensorT<float>()>&,
                                 const std::vector<TensorT<float>>&, float);
template double grad_check<double>(const std::function<TensorT<double>()>&,
                                   const std::vector<TensorT<double>>&, double);

}  // namespace nik
