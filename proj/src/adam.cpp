#include "nik/adam.hpp"

#include <cmath>

namespace nik {

template <typename T>
AdamT<T>::AdamT(std::vector<TensorT<T>> params, AdamConfigT<T> cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
        p.set_requires_grad(true);
        m_.emplace_back(p.data().size(), T(0));
        v_.emplace_back(p.data().size(), T(0));
    }
}

template <typename T>
void AdamT<T>::step(T lr) {
    ++t_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& w = params_[pi].data();
        const auto& g = params_[pi].grad();
        if (g.size() != w.size())
            throw ContractViolation("adam: grad/param size mismatch for parameter " +
                                    std::to_string(pi));
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
            const T m_hat = m[i] / bc1;
            const T v_hat = v[i] / bc2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

template <typename T>
void AdamT<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template class AdamT<float>;
template class AdamT<double>;

}  // namespace nik
