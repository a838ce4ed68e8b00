#include "nik/tensor.hpp"

#include <cmath>
#include <sstream>

namespace nik {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape) {
    auto node = std::make_shared<detail::TensorNode<T>>();
    const int64_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->data.assign(static_cast<size_t>(n), T(0));
    return TensorT(std::move(node));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value) {
    TensorT t = zeros(std::move(shape));
    for (auto& x : t.data()) x = value;
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_data(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ContractViolation("from_data: shape " + shape_str(shape) + " wants " +
                                std::to_string(shape_numel(shape)) + " scalars, got " +
                                std::to_string(data.size()));
    auto node = std::make_shared<detail::TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return TensorT(std::move(node));
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value) {
    return from_data(Shape{}, {value});
}

template <typename T>
bool TensorT<T>::all_finite() const {
    for (T x : node_->data)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

namespace {
template <typename T>
TapeT<T>*& current_tape_slot() {
    thread_local TapeT<T>* slot = nullptr;
    return slot;
}
}  // namespace

template <typename T>
TapeT<T>* TapeT<T>::current() {
    return current_tape_slot<T>();
}

template <typename T>
void TapeT<T>::backward(const TensorT<T>& root) {
    if (!root.defined() || root.numel() != 1)
        throw ContractViolation("backward: root must be a scalar tensor");
    if (!produced(root.node().get()))
        throw ContractViolation("backward: root was not produced on this tape");
    // Fresh gradients for everything this tape produced; leaves accumulate.
    for (auto& e : entries_) {
        e.output->ensure_grad();
        std::fill(e.output->grad.begin(), e.output->grad.end(), T(0));
    }
    root.node()->grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
}

template <typename T>
TapeScopeT<T>::TapeScopeT(TapeT<T>& tape) {
    previous_ = current_tape_slot<T>();
    current_tape_slot<T>() = &tape;
}

template <typename T>
TapeScopeT<T>::TapeScopeT(std::nullptr_t) {
    previous_ = current_tape_slot<T>();
    current_tape_slot<T>() = nullptr;
}

template <typename T>
TapeScopeT<T>::~TapeScopeT() {
    current_tape_slot<T>() = previous_;
}

template class TensorT<float>;
template class TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;
template class TapeScopeT<float>;
template class TapeScopeT<double>;

}  // namespace nik
