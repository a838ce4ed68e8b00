#include "nik/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace nik {

namespace {

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (!shapes_equal(a.shape(), b.shape()))
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

int norm_axis(const char* op, int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw ContractViolation(std::string(op) + ": axis out of range for rank " +
                                std::to_string(rank));
    return axis;
}

// Decomposes a shape around `axis` into (outer, extent, inner) block sizes.
struct AxisBlocks {
    int64_t outer = 1;
    int64_t extent = 1;
    int64_t inner = 1;
};

AxisBlocks axis_blocks(const Shape& shape, int axis) {
    AxisBlocks b;
    for (int i = 0; i < axis; ++i) b.outer *= shape[static_cast<size_t>(i)];
    b.extent = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
        b.inner *= shape[i];
    return b;
}

template <typename T>
bool tracking(std::initializer_list<const TensorT<T>*> inputs) {
    if (!TapeT<T>::current()) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
TensorT<T> finish(TensorT<T> out, bool track, std::function<void()> backward_fn) {
    if (track) {
        out.set_requires_grad(true);
        TapeT<T>::current()->record(out.node(), std::move(backward_fn));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("add", a, b);
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    const bool track = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    return finish(std::move(out), track, [an, bn, on] {
        const auto& g = on->grad;
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
        }
    });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("sub", a, b);
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    const bool track = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    return finish(std::move(out), track, [an, bn, on] {
        const auto& g = on->grad;
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
        }
    });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("mul", a, b);
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    const bool track = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    return finish(std::move(out), track, [an, bn, on] {
        const auto& g = on->grad;
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->data[i];
        }
    });
}

template <typename T>
TensorT<T> divide(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("divide", a, b);
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    const bool track = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    return finish(std::move(out), track, [an, bn, on] {
        const auto& g = on->grad;
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] / bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i)
                bn->grad[i] -= g[i] * on->data[i] / bn->data[i];
        }
    });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, c] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
    });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    return mul_scalar(a, T(-1));
}

template <typename T>
TensorT<T> square(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * av[i];
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
            an->grad[i] += T(2) * an->data[i] * on->grad[i];
    });
}

template <typename T>
TensorT<T> sqrt_(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        if (av[i] < T(0))
            throw ContractViolation("sqrt_: negative input " + std::to_string(av[i]));
        ov[i] = std::sqrt(av[i]);
    }
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
            an->grad[i] += on->grad[i] * T(0.5) / on->data[i];
    });
}

template <typename T>
TensorT<T> exp_(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
            an->grad[i] += on->grad[i] * on->data[i];
    });
}

template <typename T>
TensorT<T> log_(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        if (av[i] <= T(0))
            throw ContractViolation("log_: non-positive input " + std::to_string(av[i]));
        ov[i] = std::log(av[i]);
    }
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
            an->grad[i] += on->grad[i] / an->data[i];
    });
}

template <typename T>
TensorT<T> acos_(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        if (av[i] < T(-1) || av[i] > T(1))
            throw ContractViolation("acos_: input outside [-1, 1]: " + std::to_string(av[i]) +
                                    " (callers must clamp)");
        ov[i] = std::acos(av[i]);
    }
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) {
            const T x = an->data[i];
            an->grad[i] -= on->grad[i] / std::sqrt(T(1) - x * x);
        }
    });
}

template <typename T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
    if (!(lo <= hi)) throw ContractViolation("clamp: lo > hi");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(std::max(av[i], lo), hi);
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, lo, hi] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) {
            const T x = an->data[i];
            if (x > lo && x < hi) an->grad[i] += on->grad[i];
        }
    });
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        const T x = av[i];
        ov[i] = x * T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2)));
    }
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) {
            const T x = an->data[i];
            const T cdf = T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2)));
            const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
            an->grad[i] += on->grad[i] * (cdf + x * pdf);
        }
    });
}

// ------------------------------------------------------------------ structure

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ContractViolation("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
    TensorT<T> out = TensorT<T>::from_data(std::move(shape), a.data());
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
}

template <typename T>
TensorT<T> transpose_last(const TensorT<T>& a) {
    if (a.rank() < 2) throw ContractViolation("transpose_last: rank must be >= 2");
    Shape out_shape = a.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    const int64_t m = a.dim(a.rank() - 2);
    const int64_t n = a.dim(a.rank() - 1);
    const int64_t batch = a.numel() / (m * n);
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    const auto& av = a.data();
    auto& ov = out.data();
    for (int64_t b = 0; b < batch; ++b) {
        const T* src = av.data() + b * m * n;
        T* dst = ov.data() + b * m * n;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, batch, m, n] {
        an->ensure_grad();
        for (int64_t b = 0; b < batch; ++b) {
            const T* g = on->grad.data() + b * m * n;
            T* ga = an->grad.data() + b * m * n;
            for (int64_t j = 0; j < n; ++j)
                for (int64_t i = 0; i < m; ++i) ga[i * n + j] += g[j * m + i];
        }
    });
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len) {
    const int ax = norm_axis("slice", axis, a.rank());
    const int extent = a.dim(ax);
    if (start < 0 || len <= 0 || start + len > extent)
        throw ContractViolation("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") outside axis extent " +
                                std::to_string(extent));
    const AxisBlocks blk = axis_blocks(a.shape(), ax);
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(ax)] = len;
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    const auto& av = a.data();
    auto& ov = out.data();
    for (int64_t o = 0; o < blk.outer; ++o)
        std::memcpy(ov.data() + o * len * blk.inner,
                    av.data() + (o * blk.extent + start) * blk.inner,
                    static_cast<size_t>(len * blk.inner) * sizeof(T));
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, blk, start, len] {
        an->ensure_grad();
        for (int64_t o = 0; o < blk.outer; ++o) {
            const T* g = on->grad.data() + o * len * blk.inner;
            T* ga = an->grad.data() + (o * blk.extent + start) * blk.inner;
            for (int64_t i = 0; i < len * blk.inner; ++i) ga[i] += g[i];
        }
    });
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
    if (parts.empty()) throw ContractViolation("concat: no inputs");
    const int ax = norm_axis("concat", axis, parts[0].rank());
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != parts[0].rank())
            throw ContractViolation("concat: rank mismatch");
        for (int d = 0; d < p.rank(); ++d)
            if (d != ax && p.dim(d) != parts[0].dim(d))
                throw ContractViolation("concat: shape mismatch " + shape_str(p.shape()) +
                                        " vs " + shape_str(parts[0].shape()));
        total += p.dim(ax);
    }
    Shape out_shape = parts[0].shape();
    out_shape[static_cast<size_t>(ax)] = total;
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    const AxisBlocks blk = axis_blocks(out_shape, ax);
    auto& ov = out.data();
    int offset = 0;
    bool track = false;
    for (const auto& p : parts) {
        const int len = p.dim(ax);
        const auto& pv = p.data();
        for (int64_t o = 0; o < blk.outer; ++o)
            std::memcpy(ov.data() + (o * blk.extent + offset) * blk.inner,
                        pv.data() + o * len * blk.inner,
                        static_cast<size_t>(len * blk.inner) * sizeof(T));
        offset += len;
        track = track || tracking<T>({&p});
    }
    std::vector<std::shared_ptr<detail::TensorNode<T>>> part_nodes;
    part_nodes.reserve(parts.size());
    for (const auto& p : parts) part_nodes.push_back(p.node());
    auto on = out.node();
    return finish(std::move(out), track, [part_nodes, on, blk] {
        int offset = 0;
        for (const auto& pn : part_nodes) {
            const int64_t len = static_cast<int64_t>(pn->data.size()) / (blk.outer * blk.inner);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int64_t o = 0; o < blk.outer; ++o) {
                    const T* g = on->grad.data() + (o * blk.extent + offset) * blk.inner;
                    T* gp = pn->grad.data() + o * len * blk.inner;
                    for (int64_t i = 0; i < len * blk.inner; ++i) gp[i] += g[i];
                }
            }
            offset += static_cast<int>(len);
        }
    });
}

template <typename T>
TensorT<T> repeat_axis(const TensorT<T>& a, int axis, int n) {
    const int ax = norm_axis("repeat_axis", axis, a.rank());
    if (a.dim(ax) != 1)
        throw ContractViolation("repeat_axis: axis extent must be 1, got " +
                                std::to_string(a.dim(ax)));
    if (n < 1) throw ContractViolation("repeat_axis: n must be >= 1");
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(ax)] = n;
    const AxisBlocks blk = axis_blocks(a.shape(), ax);
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    const auto& av = a.data();
    auto& ov = out.data();
    for (int64_t o = 0; o < blk.outer; ++o)
        for (int64_t r = 0; r < n; ++r)
            std::memcpy(ov.data() + (o * n + r) * blk.inner, av.data() + o * blk.inner,
                        static_cast<size_t>(blk.inner) * sizeof(T));
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, blk, n] {
        an->ensure_grad();
        for (int64_t o = 0; o < blk.outer; ++o) {
            T* ga = an->grad.data() + o * blk.inner;
            for (int64_t r = 0; r < n; ++r) {
                const T* g = on->grad.data() + (o * n + r) * blk.inner;
                for (int64_t i = 0; i < blk.inner; ++i) ga[i] += g[i];
            }
        }
    });
}

// ----------------------------------------------------------------- reductions

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    T acc = T(0);
    for (T x : a.data()) acc += x;
    TensorT<T> out = TensorT<T>::scalar(acc);
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on] {
        an->ensure_grad();
        const T g = on->grad[0];
        for (auto& ga : an->grad) ga += g;
    });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    if (a.numel() == 0) throw ContractViolation("mean: empty tensor");
    T acc = T(0);
    for (T x : a.data()) acc += x;
    const T inv_n = T(1) / static_cast<T>(a.numel());
    TensorT<T> out = TensorT<T>::scalar(acc * inv_n);
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, inv_n] {
        an->ensure_grad();
        const T g = on->grad[0] * inv_n;
        for (auto& ga : an->grad) ga += g;
    });
}

namespace {
template <typename T>
TensorT<T> reduce_axis_impl(const char* name, const TensorT<T>& a, int axis, bool take_mean) {
    const int ax = norm_axis(name, axis, a.rank());
    const AxisBlocks blk = axis_blocks(a.shape(), ax);
    Shape out_shape;
    for (int d = 0; d < a.rank(); ++d)
        if (d != ax) out_shape.push_back(a.dim(d));
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    const auto& av = a.data();
    auto& ov = out.data();
    const T scale = take_mean ? T(1) / static_cast<T>(blk.extent) : T(1);
    for (int64_t o = 0; o < blk.outer; ++o)
        for (int64_t r = 0; r < blk.extent; ++r) {
            const T* src = av.data() + (o * blk.extent + r) * blk.inner;
            T* dst = ov.data() + o * blk.inner;
            for (int64_t i = 0; i < blk.inner; ++i) dst[i] += src[i];
        }
    if (take_mean)
        for (auto& x : ov) x *= scale;
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, blk, scale] {
        an->ensure_grad();
        for (int64_t o = 0; o < blk.outer; ++o) {
            const T* g = on->grad.data() + o * blk.inner;
            for (int64_t r = 0; r < blk.extent; ++r) {
                T* ga = an->grad.data() + (o * blk.extent + r) * blk.inner;
                for (int64_t i = 0; i < blk.inner; ++i) ga[i] += g[i] * scale;
            }
        }
    });
}
}  // namespace

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& a, int axis) {
    return reduce_axis_impl("sum_axis", a, axis, false);
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& a, int axis) {
    return reduce_axis_impl("mean_axis", a, axis, true);
}

// ------------------------------------------------------------- linear algebra

namespace {

// C[r, :] += A[r, :] @ B_r, row-parallel; deterministic independent of the
// number of threads (each output row is reduced sequentially).
template <typename T>
void matmul_forward(const T* A, const T* B, T* C, int64_t batch, int64_t m, int64_t k, int64_t n,
                    bool shared_b) {
    const int64_t rows = batch * m;
#pragma omp parallel for schedule(static) if (rows * k * n > 32768)
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t bi = r / m;
        const T* a_row = A + r * k;
        const T* b_base = shared_b ? B : B + bi * k * n;
        T* c_row = C + r * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = a_row[kk];
            const T* b_row = b_base + kk * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ContractViolation("matmul: ranks must be >= 2, got " + shape_str(a.shape()) +
                                " @ " + shape_str(b.shape()));
    const bool shared_b = (b.rank() == 2 && a.rank() > 2);
    if (!shared_b && a.rank() != b.rank())
        throw ContractViolation("matmul: rank mismatch " + shape_str(a.shape()) + " @ " +
                                shape_str(b.shape()));
    const int64_t m = a.dim(a.rank() - 2);
    const int64_t k = a.dim(a.rank() - 1);
    const int64_t kb = b.dim(b.rank() - 2);
    const int64_t n = b.dim(b.rank() - 1);
    if (k != kb)
        throw ContractViolation("matmul: inner dimension mismatch " + shape_str(a.shape()) +
                                " @ " + shape_str(b.shape()));
    if (!shared_b)
        for (int d = 0; d < a.rank() - 2; ++d)
            if (a.dim(d) != b.dim(d))
                throw ContractViolation("matmul: batch dimension mismatch " +
                                        shape_str(a.shape()) + " @ " + shape_str(b.shape()));
    const int64_t batch = a.numel() / (m * k);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(static_cast<int>(n));
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    matmul_forward(a.data().data(), b.data().data(), out.data().data(), batch, m, k, n, shared_b);

    const bool track = tracking<T>({&a, &b});
    auto an = a.node(), bn = b.node(), on = out.node();
    return finish(std::move(out), track, [an, bn, on, batch, m, k, n, shared_b] {
        const int64_t rows = batch * m;
        const T* A = an->data.data();
        const T* B = bn->data.data();
        const T* G = on->grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            T* dA = an->grad.data();
#pragma omp parallel for schedule(static) if (rows * k * n > 32768)
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t bi = r / m;
                const T* g_row = G + r * n;
                const T* b_base = shared_b ? B : B + bi * k * n;
                T* da_row = dA + r * k;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const T* b_row = b_base + kk * n;
                    T acc = T(0);
                    for (int64_t j = 0; j < n; ++j) acc += g_row[j] * b_row[j];
                    da_row[kk] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            T* dB = bn->grad.data();
            if (shared_b) {
#pragma omp parallel for schedule(static) if (rows * k * n > 32768)
                for (int64_t kk = 0; kk < k; ++kk) {
                    T* db_row = dB + kk * n;
                    for (int64_t r = 0; r < rows; ++r) {
                        const T av = A[r * k + kk];
                        const T* g_row = G + r * n;
                        for (int64_t j = 0; j < n; ++j) db_row[j] += av * g_row[j];
                    }
                }
            } else {
#pragma omp parallel for schedule(static) if (rows * k * n > 32768)
                for (int64_t bi = 0; bi < batch; ++bi) {
                    for (int64_t i = 0; i < m; ++i) {
                        const T* a_row = A + (bi * m + i) * k;
                        const T* g_row = G + (bi * m + i) * n;
                        for (int64_t kk = 0; kk < k; ++kk) {
                            const T av = a_row[kk];
                            T* db_row = dB + (bi * k + kk) * n;
                            for (int64_t j = 0; j < n; ++j) db_row[j] += av * g_row[j];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b) {
    if (b.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != b.dim(0))
        throw ContractViolation("add_bias: bias " + shape_str(b.shape()) +
                                " does not match trailing axis of " + shape_str(x.shape()));
    const int64_t n = b.dim(0);
    const int64_t rows = x.numel() / n;
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < n; ++j) ov[r * n + j] = xv[r * n + j] + bv[j];
    const bool track = tracking<T>({&x, &b});
    auto xn = x.node(), bn = b.node(), on = out.node();
    return finish(std::move(out), track, [xn, bn, on, rows, n] {
        const auto& g = on->grad;
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < n; ++j) bn->grad[j] += g[r * n + j];
        }
    });
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add_bias(matmul(x, w), b);
}

// ------------------------------------------------------- prefix-shape scaling

namespace {
template <typename T>
int64_t prefix_block(const char* op, const TensorT<T>& x, const TensorT<T>& s) {
    if (s.rank() > x.rank())
        throw ContractViolation(std::string(op) + ": scale rank exceeds input rank");
    for (int d = 0; d < s.rank(); ++d)
        if (s.dim(d) != x.dim(d))
            throw ContractViolation(std::string(op) + ": " + shape_str(s.shape()) +
                                    " is not a shape prefix of " + shape_str(x.shape()));
    return x.numel() / std::max<int64_t>(s.numel(), 1);
}
}  // namespace

template <typename T>
TensorT<T> mul_prefix(const TensorT<T>& x, const TensorT<T>& s) {
    const int64_t block = prefix_block("mul_prefix", x, s);
    const int64_t rows = s.numel();
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    const auto& sv = s.data();
    auto& ov = out.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < block; ++i) ov[r * block + i] = xv[r * block + i] * sv[r];
    const bool track = tracking<T>({&x, &s});
    auto xn = x.node(), sn = s.node(), on = out.node();
    return finish(std::move(out), track, [xn, sn, on, rows, block] {
        const auto& g = on->grad;
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < block; ++i)
                    xn->grad[r * block + i] += g[r * block + i] * sn->data[r];
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                T acc = T(0);
                for (int64_t i = 0; i < block; ++i)
                    acc += g[r * block + i] * xn->data[r * block + i];
                sn->grad[r] += acc;
            }
        }
    });
}

template <typename T>
TensorT<T> div_prefix(const TensorT<T>& x, const TensorT<T>& s) {
    const int64_t block = prefix_block("div_prefix", x, s);
    const int64_t rows = s.numel();
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    const auto& sv = s.data();
    auto& ov = out.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < block; ++i) ov[r * block + i] = xv[r * block + i] / sv[r];
    const bool track = tracking<T>({&x, &s});
    auto xn = x.node(), sn = s.node(), on = out.node();
    return finish(std::move(out), track, [xn, sn, on, rows, block] {
        const auto& g = on->grad;
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < block; ++i)
                    xn->grad[r * block + i] += g[r * block + i] / sn->data[r];
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                T acc = T(0);
                for (int64_t i = 0; i < block; ++i)
                    acc += g[r * block + i] * on->data[r * block + i];
                sn->grad[r] -= acc / sn->data[r];
            }
        }
    });
}

// -------------------------------------------------------------- normalization

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    const int ax = norm_axis("softmax", axis, a.rank());
    const AxisBlocks blk = axis_blocks(a.shape(), ax);
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (int64_t o = 0; o < blk.outer; ++o)
        for (int64_t i = 0; i < blk.inner; ++i) {
            const int64_t base = o * blk.extent * blk.inner + i;
            T mx = av[base];
            for (int64_t r = 1; r < blk.extent; ++r)
                mx = std::max(mx, av[base + r * blk.inner]);
            T denom = T(0);
            for (int64_t r = 0; r < blk.extent; ++r) {
                const T e = std::exp(av[base + r * blk.inner] - mx);
                ov[base + r * blk.inner] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int64_t r = 0; r < blk.extent; ++r) ov[base + r * blk.inner] *= inv;
        }
    const bool track = tracking<T>({&a});
    auto an = a.node(), on = out.node();
    return finish(std::move(out), track, [an, on, blk] {
        an->ensure_grad();
        const auto& y = on->data;
        const auto& g = on->grad;
        for (int64_t o = 0; o < blk.outer; ++o)
            for (int64_t i = 0; i < blk.inner; ++i) {
                const int64_t base = o * blk.extent * blk.inner + i;
                T dot = T(0);
                for (int64_t r = 0; r < blk.extent; ++r) {
                    const int64_t idx = base + r * blk.inner;
                    dot += g[idx] * y[idx];
                }
                for (int64_t r = 0; r < blk.extent; ++r) {
                    const int64_t idx = base + r * blk.inner;
                    an->grad[idx] += y[idx] * (g[idx] - dot);
                }
            }
    });
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps) {
    if (x.rank() < 1) throw ContractViolation("layer_norm: rank must be >= 1");
    const int64_t n = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != n || beta.rank() != 1 || beta.dim(0) != n)
        throw ContractViolation("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                                shape_str(beta.shape()) + " do not match feature axis of " +
                                shape_str(x.shape()));
    const int64_t rows = x.numel() / n;
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    auto& ov = out.data();
    // Saved per-row statistics for backward.
    std::vector<T> inv_sigma(static_cast<size_t>(rows));
    std::vector<T> x_hat(xv.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * n;
        T mu = T(0);
        for (int64_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (int64_t j = 0; j < n; ++j) {
            const T d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_sigma[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < n; ++j) {
            const T xh = (xr[j] - mu) * inv;
            x_hat[static_cast<size_t>(r * n + j)] = xh;
            ov[r * n + j] = xh * gv[j] + bv[j];
        }
    }
    const bool track = tracking<T>({&x, &gamma, &beta});
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    return finish(std::move(out), track,
                  [xn, gn, bn, on, rows, n, inv_sigma = std::move(inv_sigma),
                   x_hat = std::move(x_hat)] {
        const auto& g = on->grad;
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T* gr = g.data() + r * n;
                const T* xh = x_hat.data() + r * n;
                T mean_dg = T(0), mean_dgxh = T(0);
                for (int64_t j = 0; j < n; ++j) {
                    const T dg = gr[j] * gn->data[j];
                    mean_dg += dg;
                    mean_dgxh += dg * xh[j];
                }
                mean_dg /= static_cast<T>(n);
                mean_dgxh /= static_cast<T>(n);
                const T inv = inv_sigma[static_cast<size_t>(r)];
                for (int64_t j = 0; j < n; ++j) {
                    const T dg = gr[j] * gn->data[j];
                    xn->grad[r * n + j] += inv * (dg - mean_dg - xh[j] * mean_dgxh);
                }
            }
        }
        if (gn->requires_grad) {
            gn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < n; ++j)
                    gn->grad[j] += g[r * n + j] * x_hat[static_cast<size_t>(r * n + j)];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < n; ++j) bn->grad[j] += g[r * n + j];
        }
    });
}

// --------------------------------------------------------------- instantiation

#define NIK_INSTANTIATE_OPS(T)                                                              \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                       \
    template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                       \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                       \
    template TensorT<T> divide<T>(const TensorT<T>&, const TensorT<T>&);                    \
    template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                                \
    template TensorT<T> mul_scalar<T>(const TensorT<T>&, T);                                \
    template TensorT<T> neg<T>(const TensorT<T>&);                                          \
    template TensorT<T> square<T>(const TensorT<T>&);                                       \
    template TensorT<T> sqrt_<T>(const TensorT<T>&);                                        \
    template TensorT<T> exp_<T>(const TensorT<T>&);                                         \
    template TensorT<T> log_<T>(const TensorT<T>&);                                         \
    template TensorT<T> acos_<T>(const TensorT<T>&);                                        \
    template TensorT<T> clamp<T>(const TensorT<T>&, T, T);                                  \
    template TensorT<T> gelu<T>(const TensorT<T>&);                                         \
    template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                               \
    template TensorT<T> transpose_last<T>(const TensorT<T>&);                               \
    template TensorT<T> slice<T>(const TensorT<T>&, int, int, int);                         \
    template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, int);                     \
    template TensorT<T> repeat_axis<T>(const TensorT<T>&, int, int);                        \
    template TensorT<T> sum<T>(const TensorT<T>&);                                          \
    template TensorT<T> mean<T>(const TensorT<T>&);                                         \
    template TensorT<T> sum_axis<T>(const TensorT<T>&, int);                                \
    template TensorT<T> mean_axis<T>(const TensorT<T>&, int);                               \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                    \
    template TensorT<T> add_bias<T>(const TensorT<T>&, const TensorT<T>&);                  \
    template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&); \
    template TensorT<T> mul_prefix<T>(const TensorT<T>&, const TensorT<T>&);                \
    template TensorT<T> div_prefix<T>(const TensorT<T>&, const TensorT<T>&);                \
    template TensorT<T> softmax<T>(const TensorT<T>&, int);                                 \
    template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, T);

NIK_INSTANTIATE_OPS(float)
NIK_INSTANTIATE_OPS(double)

#undef NIK_INSTANTIATE_OPS

}  // namespace nik
