#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ffvit/config.hpp"
#include "ffvit/errors.hpp"
#include "ffvit/model.hpp"
#include "ffvit/ops.hpp"
#include "ffvit/rng.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

enum class BenchVariant {
    ff_fixed_hidden,         // token FF hidden width pinned to a constant
    ff_proportional_hidden,  // token FF hidden width = 4 N (the quadratic caveat)
    attention_baseline       // multi-head attention block
};

inline std::string to_string(BenchVariant v) {
    switch (v) {
        case BenchVariant::ff_fixed_hidden: return "ff_fixed_hidden";
        case BenchVariant::ff_proportional_hidden: return "ff_proportional_hidden";
        case BenchVariant::attention_baseline: return "attention_baseline";
    }
    throw ConfigError("unknown bench variant value");
}

inline BenchVariant bench_variant_from_string(std::string_view s) {
    if (s == "ff_fixed_hidden") return BenchVariant::ff_fixed_hidden;
    if (s == "ff_proportional_hidden") return BenchVariant::ff_proportional_hidden;
    if (s == "attention_baseline") return BenchVariant::attention_baseline;
    throw ConfigError("unknown bench variant '" + std::string(s) + "'");
}

struct BenchSpec {
    BenchVariant variant = BenchVariant::ff_fixed_hidden;
    std::vector<int64_t> seq_lens;
    int64_t dim = 64;
    int64_t fixed_hidden = 256;
    int64_t heads = 1;
    int64_t repetitions = 5;
    int64_t warmup = 2;
    uint64_t seed = 1234;

    void validate() const {
        if (seq_lens.size() < 2) throw ConfigError("bench: need at least two sequence lengths");
        for (size_t i = 0; i < seq_lens.size(); ++i) {
            if (seq_lens[i] < 2 || (i > 0 && seq_lens[i] <= seq_lens[i - 1])) {
                throw ConfigError("bench: sequence lengths must be strictly increasing and >= 2");
            }
        }
        if (repetitions < 3) throw ConfigError("bench: repetitions must be >= 3");
        if (warmup < 0) throw ConfigError("bench: warmup must be >= 0");
        if (dim <= 0 || fixed_hidden <= 0) throw ConfigError("bench: dim/hidden must be positive");
        if (heads <= 0 || dim % heads != 0) {
            throw ConfigError("bench: dim must be divisible by heads");
        }
    }

    int64_t token_hidden_at(int64_t n) const {
        return variant == BenchVariant::ff_proportional_hidden ? 4 * n : fixed_hidden;
    }
};

struct ScalingReport {
    BenchVariant variant{};
    std::vector<int64_t> seq_lens;
    std::vector<double> median_seconds;
    std::vector<std::vector<double>> samples;  // raw per-repetition timings
    double alpha = 0.0;
};

// Least-squares slope of log(time) on log(N) over the largest half of the
// lengths, so N-linear lower-order terms do not bias the attention exponent.
inline double fit_exponent(std::span<const int64_t> lens, std::span<const double> times) {
    if (lens.size() != times.size() || lens.size() < 2) {
        throw ConfigError("fit_exponent: need matching lists with >= 2 points");
    }
    const size_t n = lens.size();
    const size_t use = std::max<size_t>(2, (n + 1) / 2);
    const size_t first = n - use;

    double sx = 0, sy = 0;
    for (size_t i = first; i < n; ++i) {
        sx += std::log(static_cast<double>(lens[i]));
        sy += std::log(times[i]);
    }
    const double mx = sx / use, my = sy / use;
    double num = 0, den = 0;
    for (size_t i = first; i < n; ++i) {
        const double dx = std::log(static_cast<double>(lens[i])) - mx;
        num += dx * (std::log(times[i]) - my);
        den += dx * dx;
    }
    if (den == 0) throw ConfigError("fit_exponent: degenerate length list");
    return num / den;
}

// Multiply-add count per block forward at batch 1, times two flops per MAC.
// Covers only the matrix products; elementwise work is excluded.
inline int64_t flop_count(BenchVariant variant, int64_t n, int64_t d, int64_t h) {
    const int64_t feature_ff = 2 * n * d * (4 * d) * 2;
    switch (variant) {
        case BenchVariant::ff_fixed_hidden:
        case BenchVariant::ff_proportional_hidden: {
            const int64_t token_ff = 2 * d * n * h * 2;
            return token_ff + feature_ff;
        }
        case BenchVariant::attention_baseline:
            return 4 * 2 * n * d * d + 2 * 2 * n * n * d + feature_ff;
    }
    throw ConfigError("unknown bench variant value");
}

namespace detail {

template <typename T>
FeedForwardWeights<T> random_ff(int64_t in, int64_t hidden, Rng &rng) {
    FeedForwardWeights<T> w;
    w.w1 = Tensor<T>::randn({in, hidden}, rng, T(0.02));
    w.b1 = Tensor<T>::zeros({hidden});
    w.w2 = Tensor<T>::randn({hidden, in}, rng, T(0.02));
    w.b2 = Tensor<T>::zeros({in});
    return w;
}

template <typename T>
AttentionWeights<T> random_attention(int64_t width, Rng &rng) {
    AttentionWeights<T> w;
    w.wq = Tensor<T>::randn({width, width}, rng, T(0.02));
    w.wk = Tensor<T>::randn({width, width}, rng, T(0.02));
    w.wv = Tensor<T>::randn({width, width}, rng, T(0.02));
    w.wo = Tensor<T>::randn({width, width}, rng, T(0.02));
    w.bq = Tensor<T>::zeros({width});
    w.bk = Tensor<T>::zeros({width});
    w.bv = Tensor<T>::zeros({width});
    w.bo = Tensor<T>::zeros({width});
    return w;
}

template <typename T>
BlockWeights<T> bench_block(const BenchSpec &spec, int64_t n, Rng &rng) {
    BlockWeights<T> blk;
    blk.norm1 = {Tensor<T>::full({spec.dim}, T(1)), Tensor<T>::zeros({spec.dim})};
    blk.norm2 = {Tensor<T>::full({spec.dim}, T(1)), Tensor<T>::zeros({spec.dim})};
    if (spec.variant == BenchVariant::attention_baseline) {
        blk.attn = random_attention<T>(spec.dim, rng);
    } else {
        blk.token_ff = random_ff<T>(n, spec.token_hidden_at(n), rng);
    }
    blk.feature_ff = random_ff<T>(spec.dim, 4 * spec.dim, rng);
    return blk;
}

}  // namespace detail

// Times a single block's forward pass at batch 1 for every length: warmup
// iterations, then timed repetitions, keeping the median. Runs without a
// tape so the architecture is measured rather than the recording overhead,
// and stays on one thread for stable exponents.
inline ScalingReport measure_forward(const BenchSpec &spec) {
    spec.validate();

    ScalingReport report;
    report.variant = spec.variant;
    report.seq_lens = spec.seq_lens;

    Rng rng(derive_seed(spec.seed, /*tag=*/0xbe7c));
    const RunContext<float> ctx{Mode::eval, 0.0, nullptr};

    for (int64_t n : spec.seq_lens) {
        try {
            const BlockWeights<float> blk = detail::bench_block<float>(spec, n, rng);
            const Tensor<float> input = Tensor<float>::randn({1, n, spec.dim}, rng, 1.0f);

            auto run_once = [&]() {
                if (spec.variant == BenchVariant::attention_baseline) {
                    return attention_block(input, blk, spec.heads, ctx);
                }
                return linear_block(input, blk, ctx);
            };

            for (int64_t i = 0; i < spec.warmup; ++i) (void)run_once();

            std::vector<double> times;
            times.reserve(static_cast<size_t>(spec.repetitions));
            for (int64_t i = 0; i < spec.repetitions; ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                const Tensor<float> out = run_once();
                const auto t1 = std::chrono::steady_clock::now();
                (void)out;
                times.push_back(std::chrono::duration<double>(t1 - t0).count());
            }

            std::vector<double> sorted = times;
            std::sort(sorted.begin(), sorted.end());
            const size_t mid = sorted.size() / 2;
            const double median = sorted.size() % 2 == 1
                                      ? sorted[mid]
                                      : 0.5 * (sorted[mid - 1] + sorted[mid]);
            report.median_seconds.push_back(median);
            report.samples.push_back(std::move(times));
        } catch (const std::bad_alloc &) {
            throw ResourceError("bench: geometry does not fit memory at N=" + std::to_string(n));
        } catch (const std::length_error &) {
            throw ResourceError("bench: geometry does not fit memory at N=" + std::to_string(n));
        }
    }

    report.alpha = fit_exponent(report.seq_lens, report.median_seconds);
    return report;
}

inline std::string scaling_csv(const ScalingReport &report) {
    std::string out = "variant,N,median_seconds,alpha\n";
    for (size_t i = 0; i < report.seq_lens.size(); ++i) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.17g,%.17g\n",
                      to_string(report.variant).c_str(),
                      static_cast<long long>(report.seq_lens[i]), report.median_seconds[i],
                      report.alpha);
        out += buf;
    }
    return out;
}

// Inverse of scaling_csv; medians round-trip exactly through %.17g.
inline ScalingReport parse_scaling_csv(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "variant,N,median_seconds,alpha") {
        throw FormatError("scaling csv: missing header");
    }
    ScalingReport report;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string variant, n_str, median_str, alpha_str;
        if (!std::getline(row, variant, ',') || !std::getline(row, n_str, ',') ||
            !std::getline(row, median_str, ',') || !std::getline(row, alpha_str)) {
            throw FormatError("scaling csv: malformed row '" + line + "'");
        }
        if (first) {
            report.variant = bench_variant_from_string(variant);
            first = false;
        }
        report.seq_lens.push_back(std::stoll(n_str));
        report.median_seconds.push_back(std::stod(median_str));
        report.alpha = std::stod(alpha_str);
    }
    return report;
}

}  // namespace ffvit
