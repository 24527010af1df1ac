#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ffvit/errors.hpp"
#include "ffvit/rng.hpp"

namespace ffvit {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape &shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    bool from_op = false;  // produced by a recorded operation
};

}  // namespace detail

// Dense row-major n-dimensional array. Copies share the underlying buffer;
// values are treated as immutable once an op has consumed the tensor, with
// two contracted exceptions: gradient accumulation and explicit parameter
// updates by an optimizer holding exclusive access.
//
// T selects the scalar width per tensor (float for training and benchmarks,
// double for finite-difference gradient checks), so both coexist in one run.
template <typename T>
class Tensor {
public:
    using Storage = detail::TensorStorage<T>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : s_(std::make_shared<Storage>()) {
        validate_shape(shape);
        s_->shape = std::move(shape);
        s_->values.assign(static_cast<size_t>(shape_numel(s_->shape)), fill);
        s_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

    static Tensor from_values(Shape shape, std::vector<T> values) {
        validate_shape(shape);
        if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values cannot fill shape " + shape_str(shape));
        }
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = std::move(shape);
        t.s_->values = std::move(values);
        return t;
    }

    static Tensor from_values(Shape shape, std::initializer_list<T> values) {
        return from_values(std::move(shape), std::vector<T>(values));
    }

    static Tensor scalar(T value) { return from_values({1}, {value}); }

    static Tensor randn(Shape shape, Rng &rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (T &v : t.data()) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor truncated_normal(Shape shape, Rng &rng, T stddev) {
        Tensor t(std::move(shape));
        for (T &v : t.data()) v = static_cast<T>(rng.truncated_normal(stddev));
        return t;
    }

    bool defined() const { return static_cast<bool>(s_); }
    const Shape &shape() const { return s_->shape; }
    int64_t rank() const { return static_cast<int64_t>(s_->shape.size()); }
    int64_t dim(int64_t i) const {
        const int64_t r = rank();
        if (i < 0) i += r;
        if (i < 0 || i >= r) {
            throw ShapeError("tensor: axis " + std::to_string(i) + " out of range for rank " +
                             std::to_string(r));
        }
        return s_->shape[static_cast<size_t>(i)];
    }
    int64_t numel() const { return static_cast<int64_t>(s_->values.size()); }

    std::span<T> data() { return {s_->values.data(), s_->values.size()}; }
    std::span<const T> data() const { return {s_->values.data(), s_->values.size()}; }

    T item() const {
        if (numel() != 1) {
            throw ShapeError("tensor: item() requires a single element, shape is " +
                             shape_str(s_->shape));
        }
        return s_->values[0];
    }

    template <typename... Ix>
    T &at(Ix... ix) {
        return s_->values[flat_index(ix...)];
    }
    template <typename... Ix>
    const T &at(Ix... ix) const {
        return s_->values[flat_index(ix...)];
    }

    bool requires_grad() const { return s_->requires_grad; }
    Tensor &set_requires_grad(bool value = true) {
        s_->requires_grad = value;
        return *this;
    }

    // True for op outputs on an active tape; such tensors relay adjoints.
    bool from_op() const { return s_->from_op; }
    void mark_from_op() { s_->from_op = true; }
    bool participates_in_grad() const { return s_->requires_grad || s_->from_op; }

    bool has_grad() const { return !s_->grad.empty(); }
    std::span<T> grad() {
        ensure_grad();
        return {s_->grad.data(), s_->grad.size()};
    }
    std::span<const T> grad() const {
        if (!has_grad()) {
            throw StateError("tensor: gradient requested but none accumulated");
        }
        return {s_->grad.data(), s_->grad.size()};
    }
    void ensure_grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    }
    void zero_grad() {
        if (!s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    }
    Tensor grad_tensor() const {
        return Tensor::from_values(s_->shape, std::vector<T>(s_->grad.begin(), s_->grad.end()));
    }

    Tensor clone() const {
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = s_->shape;
        t.s_->values = s_->values;
        return t;
    }

    bool same_storage(const Tensor &other) const { return s_ == other.s_; }
    Storage *storage() const { return s_.get(); }
    std::shared_ptr<Storage> storage_ptr() const { return s_; }

private:
    static void validate_shape(const Shape &shape) {
        for (int64_t d : shape) {
            if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
        }
    }

    template <typename... Ix>
    size_t flat_index(Ix... ix) const {
        const int64_t idx[] = {static_cast<int64_t>(ix)...};
        constexpr size_t n = sizeof...(Ix);
        if (n != s_->shape.size()) {
            throw ShapeError("tensor: " + std::to_string(n) + " indices given for shape " +
                             shape_str(s_->shape));
        }
        int64_t flat = 0;
        for (size_t i = 0; i < n; ++i) {
            if (idx[i] < 0 || idx[i] >= s_->shape[i]) {
                throw IndexError("tensor: index " + std::to_string(idx[i]) +
                                 " out of range for axis " + std::to_string(i) + " of " +
                                 shape_str(s_->shape));
            }
            flat = flat * s_->shape[i] + idx[i];
        }
        return static_cast<size_t>(flat);
    }

    std::shared_ptr<Storage> s_;
};

template <typename T>
bool same_shape(const Tensor<T> &a, const Tensor<T> &b) {
    return a.shape() == b.shape();
}

template <typename T>
bool all_finite(const Tensor<T> &t) {
    for (T v : t.data()) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

}  // namespace ffvit
