#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ffvit/errors.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

template <typename T>
class Tape;

// Scratch adjoint buffers for one backward pass. Keeping adjoints here
// instead of in tensor storage means repeated backward() calls simply add
// another full gradient into each leaf, the contracted accumulation rule.
template <typename T>
class Adjoints {
public:
    std::span<T> of(const Tensor<T> &t) {
        auto it = entries_.find(t.storage());
        if (it == entries_.end()) {
            Entry e;
            e.hold = t.storage_ptr();
            e.adj.assign(static_cast<size_t>(t.numel()), T(0));
            it = entries_.emplace(t.storage(), std::move(e)).first;
        }
        return {it->second.adj.data(), it->second.adj.size()};
    }

    // Null when no downstream contribution reached this tensor.
    const std::vector<T> *find(const Tensor<T> &t) const {
        auto it = entries_.find(t.storage());
        return it == entries_.end() ? nullptr : &it->second.adj;
    }

private:
    friend class Tape<T>;

    struct Entry {
        std::shared_ptr<detail::TensorStorage<T>> hold;
        std::vector<T> adj;
    };
    std::unordered_map<detail::TensorStorage<T> *, Entry> entries_;
};

// Record of executed operations in execution (hence topological) order.
// Recording and backward are single-threaded per tape; distinct threads use
// distinct tapes.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Adjoints<T> &)>;

    void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }

    size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1, replays adjoint rules in reverse order, then
    // adds the resulting adjoint of every requires_grad leaf into its grad.
    void backward(const Tensor<T> &loss) {
        if (loss.numel() != 1) {
            throw ShapeError("backward: loss must be a scalar, got shape " +
                             shape_str(loss.shape()));
        }
        Adjoints<T> adjoints;
        adjoints.of(loss)[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(adjoints);
        for (auto &[storage, entry] : adjoints.entries_) {
            if (!storage->requires_grad) continue;
            if (storage->grad.empty()) storage->grad.assign(storage->values.size(), T(0));
            for (size_t i = 0; i < entry.adj.size(); ++i) storage->grad[i] += entry.adj[i];
        }
    }

private:
    std::vector<BackwardFn> nodes_;
};

namespace detail {

template <typename T>
inline Tape<T> *&active_tape_slot() {
    thread_local Tape<T> *tape = nullptr;
    return tape;
}

}  // namespace detail

template <typename T>
inline Tape<T> *active_tape() {
    return detail::active_tape_slot<T>();
}

// RAII installation of a tape as the thread's recording target. Ops executed
// outside any scope run forward-only, which is what the benchmark measures.
template <typename T>
class [[nodiscard]] TapeScope {
public:
    explicit TapeScope(Tape<T> &tape) : prev_(detail::active_tape_slot<T>()) {
        detail::active_tape_slot<T>() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot<T>() = prev_; }

    TapeScope(const TapeScope &) = delete;
    TapeScope &operator=(const TapeScope &) = delete;

private:
    Tape<T> *prev_;
};

template <typename T>
void backward(const Tensor<T> &loss) {
    Tape<T> *tape = active_tape<T>();
    if (!tape) throw StateError("backward: no active computation record on this thread");
    tape->backward(loss);
}

}  // namespace ffvit
