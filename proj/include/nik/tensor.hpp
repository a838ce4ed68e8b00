#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "nik/errors.hpp"

namespace nik {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shapes_equal(const Shape& a, const Shape& b);

namespace detail {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, zero-filled
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

// Dense tensor handle with value-like copy of the handle (shared storage).
// Precision is the template parameter: float for speed runs, double for
// gradient checks.
template <typename T>
class TensorT {
public:
    using Scalar = T;

    TensorT() = default;

    static TensorT zeros(Shape shape);
    static TensorT full(Shape shape, T value);
    static TensorT from_data(Shape shape, std::vector<T> data);
    static TensorT scalar(T value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    // Allocates the gradient buffer (zeros) on first access.
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    bool requires_grad() const { return node_->requires_grad; }
    TensorT& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    }

    T item() const {
        if (numel() != 1)
            throw ContractViolation("item() requires a scalar tensor, got shape " +
                                    shape_str(shape()));
        return node_->data[0];
    }

    bool all_finite() const;

    std::shared_ptr<detail::TensorNode<T>> node() const { return node_; }

private:
    explicit TensorT(std::shared_ptr<detail::TensorNode<T>> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode<T>> node_;
};

// Ordered record of executed ops. Backward replays the closures in exact
// reverse execution order. Gradients of tensors produced on the tape are
// reset at the start of each backward pass; leaf tensors (parameters and
// external inputs) accumulate across passes until the caller zeroes them.
template <typename T>
class TapeT {
public:
    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    size_t num_ops() const { return entries_.size(); }

    void clear() {
        entries_.clear();
        produced_.clear();
    }

    void backward(const TensorT<T>& root);

    // Recording interface used by the op suite.
    void record(std::shared_ptr<detail::TensorNode<T>> output, std::function<void()> backward_fn) {
        produced_.insert(output.get());
        entries_.push_back({std::move(output), std::move(backward_fn)});
    }
    bool produced(const detail::TensorNode<T>* node) const {
        return produced_.count(node) > 0;
    }

    static TapeT* current();

private:
    struct Entry {
        std::shared_ptr<detail::TensorNode<T>> output;
        std::function<void()> fn;
    };
    std::vector<Entry> entries_;
    std::unordered_set<const detail::TensorNode<T>*> produced_;
};

// Activates a tape for the current thread; ops record onto it while the
// scope is alive. Without an active tape ops run forward-only.
template <typename T>
class TapeScopeT {
public:
    explicit TapeScopeT(TapeT<T>& tape);
    // Deactivates recording for the scope (forward-only region).
    explicit TapeScopeT(std::nullptr_t);
    ~TapeScopeT();
    TapeScopeT(const TapeScopeT&) = delete;
    TapeScopeT& operator=(const TapeScopeT&) = delete;

private:
    TapeT<T>* previous_;
};

using Tensor = TensorT<double>;
using Tape = TapeT<double>;
using TapeScope = TapeScopeT<double>;

extern template class TensorT<float>;
extern template class TensorT<double>;
extern template class TapeT<float>;
extern template class TapeT<double>;
extern template class TapeScopeT<float>;
extern template class TapeScopeT<double>;

}  // namespace nik
