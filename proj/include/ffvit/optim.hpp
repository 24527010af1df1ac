#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "ffvit/config.hpp"
#include "ffvit/errors.hpp"
#include "ffvit/params.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

enum class Schedule { cosine, constant };

inline std::string to_string(Schedule s) {
    return s == Schedule::cosine ? "cosine" : "constant";
}

inline Schedule schedule_from_string(std::string_view s) {
    if (s == "cosine") return Schedule::cosine;
    if (s == "constant") return Schedule::constant;
    throw ConfigError("unknown schedule '" + std::string(s) + "'");
}

struct TrainConfig {
    int64_t epochs = 5;
    int64_t batch_size = 32;
    double learning_rate = 1e-3;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t warmup_steps = -1;  // -1: one epoch, resolved when training starts
    Schedule schedule = Schedule::cosine;
    double grad_clip_norm = 1.0;  // <= 0 disables clipping
    uint64_t seed = 0;
    bool flip = false;
    int64_t crop_pad = 0;
    int64_t total_steps = 0;  // resolved when training starts

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("train: learning_rate must be positive");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
            throw ConfigError("train: betas must lie in [0,1)");
        }
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (eps <= 0) throw ConfigError("train: eps must be positive");
        if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    }
};

inline TrainConfig train_config_from_kv(const KvMap &kv, const std::string &prefix = "") {
    TrainConfig cfg;
    cfg.epochs = detail::kv_int(kv, prefix + "epochs", cfg.epochs);
    cfg.batch_size = detail::kv_int(kv, prefix + "batch_size", cfg.batch_size);
    cfg.learning_rate = detail::kv_double(kv, prefix + "learning_rate", cfg.learning_rate);
    cfg.weight_decay = detail::kv_double(kv, prefix + "weight_decay", cfg.weight_decay);
    cfg.beta1 = detail::kv_double(kv, prefix + "beta1", cfg.beta1);
    cfg.beta2 = detail::kv_double(kv, prefix + "beta2", cfg.beta2);
    cfg.eps = detail::kv_double(kv, prefix + "eps", cfg.eps);
    cfg.warmup_steps = detail::kv_int(kv, prefix + "warmup_steps", cfg.warmup_steps);
    if (auto it = kv.find(prefix + "schedule"); it != kv.end()) {
        cfg.schedule = schedule_from_string(it->second);
    }
    cfg.grad_clip_norm = detail::kv_double(kv, prefix + "grad_clip_norm", cfg.grad_clip_norm);
    cfg.seed = static_cast<uint64_t>(detail::kv_int(kv, prefix + "seed", 0));
    cfg.flip = detail::kv_int(kv, prefix + "flip", cfg.flip ? 1 : 0) != 0;
    cfg.crop_pad = detail::kv_int(kv, prefix + "crop_pad", cfg.crop_pad);
    cfg.total_steps = detail::kv_int(kv, prefix + "total_steps", cfg.total_steps);
    cfg.validate();
    return cfg;
}

inline void train_config_to_kv(const TrainConfig &cfg, KvMap &kv, const std::string &prefix = "") {
    kv[prefix + "epochs"] = std::to_string(cfg.epochs);
    kv[prefix + "batch_size"] = std::to_string(cfg.batch_size);
    kv[prefix + "learning_rate"] = detail::format_double(cfg.learning_rate);
    kv[prefix + "weight_decay"] = detail::format_double(cfg.weight_decay);
    kv[prefix + "beta1"] = detail::format_double(cfg.beta1);
    kv[prefix + "beta2"] = detail::format_double(cfg.beta2);
    kv[prefix + "eps"] = detail::format_double(cfg.eps);
    kv[prefix + "warmup_steps"] = std::to_string(cfg.warmup_steps);
    kv[prefix + "schedule"] = to_string(cfg.schedule);
    kv[prefix + "grad_clip_norm"] = detail::format_double(cfg.grad_clip_norm);
    kv[prefix + "seed"] = std::to_string(cfg.seed);
    kv[prefix + "flip"] = cfg.flip ? "1" : "0";
    kv[prefix + "crop_pad"] = std::to_string(cfg.crop_pad);
    kv[prefix + "total_steps"] = std::to_string(cfg.total_steps);
}

// Linear warmup from zero, then cosine decay to zero at total_steps (or a
// constant plateau). warmup_steps and total_steps must be resolved.
inline double lr_at(int64_t step, const TrainConfig &cfg) {
    if (cfg.warmup_steps < 0 || cfg.total_steps <= 0) {
        throw ConfigError("lr_at: warmup_steps/total_steps not resolved");
    }
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.learning_rate * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    }
    if (cfg.schedule == Schedule::constant) return cfg.learning_rate;
    const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    const double progress =
        span <= 0 ? 1.0 : static_cast<double>(step - cfg.warmup_steps) / span;
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

// First/second moment estimates mirroring the parameter set, plus the step
// counter used for bias correction.
template <typename T>
struct OptimizerState {
    ParameterSet<T> m, v;
    int64_t step = 0;

    static OptimizerState zeros_like(const ParameterSet<T> &params) {
        OptimizerState st;
        for (const auto &e : params) {
            st.m.add(e.name, Tensor<T>::zeros(e.tensor.shape()));
            st.v.add(e.name, Tensor<T>::zeros(e.tensor.shape()));
        }
        return st;
    }
};

// Global-norm gradient clipping. Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(ParameterSet<T> &params, double max_norm) {
    double sq = 0;
    for (auto &e : params) {
        for (T g : e.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto &e : params) {
            for (T &g : e.tensor.grad()) g *= scale;
        }
    }
    return norm;
}

// One AdamW update with decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  bias-correct;
//   theta <- theta - lr (m^ / (sqrt(v^) + eps) + wd theta)
template <typename T>
void adamw_step(ParameterSet<T> &params, OptimizerState<T> &state, const TrainConfig &cfg,
                double lr) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (auto &e : params) {
        if (!e.tensor.has_grad()) {
            throw StateError("adamw: parameter '" + e.name + "' has no gradient");
        }
        auto theta = e.tensor.data();
        auto g = e.tensor.grad();
        auto m = state.m.at(e.name).data();
        auto v = state.v.at(e.name).data();
        for (size_t i = 0; i < theta.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            const double update =
                mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * static_cast<double>(theta[i]);
            theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * update);
        }
    }
}

}  // namespace ffvit
