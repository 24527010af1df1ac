#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ffvit/config.hpp"
#include "ffvit/errors.hpp"
#include "ffvit/rng.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

// Named, ordered collection of learnable tensors. Iteration order is the
// insertion order, so two sets built from the same config line up exactly.
template <typename T>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    void add(std::string name, Tensor<T> tensor) {
        if (index_.count(name)) throw ConfigError("parameters: duplicate name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(tensor)});
    }

    bool contains(const std::string &name) const { return index_.count(name) != 0; }

    Tensor<T> &at(const std::string &name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("parameters: no tensor named '" + name + "'");
        return entries_[it->second].tensor;
    }
    const Tensor<T> &at(const std::string &name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("parameters: no tensor named '" + name + "'");
        return entries_[it->second].tensor;
    }

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    int64_t total_elements() const {
        int64_t total = 0;
        for (const auto &e : entries_) total += e.tensor.numel();
        return total;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void set_requires_grad(bool value) {
        for (auto &e : entries_) e.tensor.set_requires_grad(value);
    }
    void zero_grad() {
        for (auto &e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

struct NamedShape {
    std::string name;
    Shape shape;
};

// The canonical parameter list for a config: one source of truth for
// initialization, checkpoint validation, and the enumeration cross-check.
inline std::vector<NamedShape> expected_param_shapes(const ModelConfig &cfg) {
    cfg.validate();
    const int64_t d = cfg.dim, n = cfg.num_tokens();
    const int64_t t = cfg.token_hidden, f = cfg.feature_hidden();
    const int64_t pd = 3 * cfg.patch_size * cfg.patch_size;

    std::vector<NamedShape> out;
    out.push_back({"patch_embed.weight", {pd, d}});
    out.push_back({"patch_embed.bias", {d}});
    out.push_back({"class_token", {d}});
    out.push_back({"pos_embed", {n, d}});

    auto push_attention = [&out](const std::string &prefix, int64_t width) {
        for (const char *w : {"wq", "wk", "wv", "wo"})
            out.push_back({prefix + "." + w, {width, width}});
        for (const char *b : {"bq", "bk", "bv", "bo"}) out.push_back({prefix + "." + b, {width}});
    };

    for (int64_t i = 0; i < cfg.depth; ++i) {
        const std::string p = "block." + std::to_string(i) + ".";
        out.push_back({p + "norm1.gamma", {d}});
        out.push_back({p + "norm1.beta", {d}});
        if (cfg.variant == Variant::ff_only) {
            out.push_back({p + "token_ff.w1", {n, t}});
            out.push_back({p + "token_ff.b1", {t}});
            out.push_back({p + "token_ff.w2", {t, n}});
            out.push_back({p + "token_ff.b2", {n}});
        } else {
            push_attention(p + "attn", d);
        }
        out.push_back({p + "norm2.gamma", {d}});
        out.push_back({p + "norm2.beta", {d}});
        if (cfg.variant == Variant::attention_only) {
            push_attention(p + "feat_attn", n);
        } else {
            out.push_back({p + "feature_ff.w1", {d, f}});
            out.push_back({p + "feature_ff.b1", {f}});
            out.push_back({p + "feature_ff.w2", {f, d}});
            out.push_back({p + "feature_ff.b2", {d}});
        }
    }

    out.push_back({"final_norm.gamma", {d}});
    out.push_back({"final_norm.beta", {d}});
    out.push_back({"head.weight", {d, cfg.num_classes}});
    out.push_back({"head.bias", {cfg.num_classes}});
    return out;
}

namespace detail {

inline bool is_norm_gamma(const std::string &name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
}

inline bool is_zero_init(const std::string &name) {
    // biases and norm shifts start at zero
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "beta") == 0) return true;
    const size_t dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return !leaf.empty() && leaf[0] == 'b';
}

}  // namespace detail

// Deterministic initialization: matrices, the class token, and the
// positional embedding draw truncated-normal with std 0.02; biases and norm
// shifts start at zero; norm scales at one.
template <typename T>
ParameterSet<T> init_params(const ModelConfig &cfg, uint64_t seed) {
    constexpr double kInitStd = 0.02;
    Rng rng(derive_seed(seed, /*tag=*/0x1217));

    ParameterSet<T> params;
    for (const NamedShape &spec : expected_param_shapes(cfg)) {
        Tensor<T> tensor;
        if (detail::is_norm_gamma(spec.name)) {
            tensor = Tensor<T>::full(spec.shape, T(1));
        } else if (detail::is_zero_init(spec.name)) {
            tensor = Tensor<T>::zeros(spec.shape);
        } else {
            tensor = Tensor<T>::truncated_normal(spec.shape, rng, static_cast<T>(kInitStd));
        }
        tensor.set_requires_grad(true);
        params.add(spec.name, std::move(tensor));
    }
    return params;
}

template <typename From, typename To>
ParameterSet<To> convert_params(const ParameterSet<From> &src) {
    ParameterSet<To> out;
    for (const auto &e : src) {
        std::vector<To> values(e.tensor.data().begin(), e.tensor.data().end());
        Tensor<To> t = Tensor<To>::from_values(e.tensor.shape(), std::move(values));
        t.set_requires_grad(e.tensor.requires_grad());
        out.add(e.name, std::move(t));
    }
    return out;
}

}  // namespace ffvit
