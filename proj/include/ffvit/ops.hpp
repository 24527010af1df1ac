#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "ffvit/errors.hpp"
#include "ffvit/rng.hpp"
#include "ffvit/tape.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

namespace detail {

// c[M,N] += a[M,K] * b[K,N]
template <typename T>
void gemm_nn_acc(const T *a, const T *b, T *c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T *arow = a + i * k;
        T *crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T aval = arow[p];
            const T *brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
        }
    }
}

// c[M,K] += a[M,N] * b[K,N]^T
template <typename T>
void gemm_nt_acc(const T *a, const T *b, T *c, int64_t m, int64_t n, int64_t k) {
    for (int64_t i = 0; i < m; ++i) {
        const T *arow = a + i * n;
        T *crow = c + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T *brow = b + p * n;
            T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
            int64_t j = 0;
            for (; j + 4 <= n; j += 4) {
                acc0 += arow[j] * brow[j];
                acc1 += arow[j + 1] * brow[j + 1];
                acc2 += arow[j + 2] * brow[j + 2];
                acc3 += arow[j + 3] * brow[j + 3];
            }
            for (; j < n; ++j) acc0 += arow[j] * brow[j];
            crow[p] += ((acc0 + acc1) + (acc2 + acc3));
        }
    }
}

// c[K,N] += a[M,K]^T * b[M,N]
template <typename T>
void gemm_tn_acc(const T *a, const T *b, T *c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T *arow = a + i * k;
        const T *brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T aval = arow[p];
            T *crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
        }
    }
}

// Per-element slice offsets of one operand for every flattened output batch
// index, with broadcast (size-1 or missing) dimensions pinned to offset 0.
inline std::vector<int64_t> broadcast_offsets(const Shape &out_batch, const Shape &op_batch) {
    const size_t nd = out_batch.size();
    Shape padded(nd, 1);
    std::copy(op_batch.begin(), op_batch.end(), padded.begin() + (nd - op_batch.size()));

    int64_t count = 1;
    for (int64_t d : out_batch) count *= d;

    std::vector<int64_t> offsets(static_cast<size_t>(count));
    for (int64_t flat = 0; flat < count; ++flat) {
        int64_t rem = flat, off = 0;
        for (size_t i = 0; i < nd; ++i) {
            int64_t stride = 1;
            for (size_t j = i + 1; j < nd; ++j) stride *= out_batch[j];
            const int64_t coord = rem / stride;
            rem %= stride;
            off = off * padded[i] + (padded[i] == 1 ? 0 : coord);
        }
        offsets[static_cast<size_t>(flat)] = off;
    }
    return offsets;
}

template <typename T>
bool should_record(const Tensor<T> &t) {
    return active_tape<T>() != nullptr && t.participates_in_grad();
}

template <typename T, typename... Ts>
bool should_record(const Tensor<T> &t, const Ts &...rest) {
    return should_record(t) || should_record(rest...);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [.., M, K] x [.., K, N] -> [.., M, N], leading dims broadcast from 1
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(-2), k = a.dim(-1);
    const int64_t kb = b.dim(-2), n = b.dim(-1);
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }

    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    const size_t nb = std::max(a_batch.size(), b_batch.size());
    Shape out_batch(nb, 1);
    for (size_t i = 0; i < nb; ++i) {
        const int64_t da = i < nb - a_batch.size() ? 1 : a_batch[i - (nb - a_batch.size())];
        const int64_t db = i < nb - b_batch.size() ? 1 : b_batch[i - (nb - b_batch.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("matmul: batch dimensions do not broadcast, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
        }
        out_batch[i] = std::max(da, db);
    }

    Shape out_shape = out_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);

    const auto a_off = detail::broadcast_offsets(out_batch, a_batch);
    const auto b_off = detail::broadcast_offsets(out_batch, b_batch);
    const int64_t batches = static_cast<int64_t>(a_off.size());

    const T *ap = a.data().data();
    const T *bp = b.data().data();
    T *cp = out.data().data();
    for (int64_t bi = 0; bi < batches; ++bi) {
        detail::gemm_nn_acc(ap + a_off[bi] * m * k, bp + b_off[bi] * k * n, cp + bi * m * n, m, k,
                            n);
    }

    if (detail::should_record(a, b)) {
        out.mark_from_op();
        active_tape<T>()->record([a, b, out, a_off, b_off, m, k, n](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            const int64_t batches = static_cast<int64_t>(a_off.size());
            if (a.participates_in_grad()) {
                T *da = adj.of(a).data();
                const T *bp = b.data().data();
                for (int64_t bi = 0; bi < batches; ++bi) {
                    detail::gemm_nt_acc(dout->data() + bi * m * n, bp + b_off[bi] * k * n,
                                        da + a_off[bi] * m * k, m, n, k);
                }
            }
            if (b.participates_in_grad()) {
                T *db = adj.of(b).data();
                const T *ap = a.data().data();
                for (int64_t bi = 0; bi < batches; ++bi) {
                    detail::gemm_tn_acc(ap + a_off[bi] * m * k, dout->data() + bi * m * n,
                                        db + b_off[bi] * k * n, m, k, n);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// transpose_last_two: materializes the swapped copy (no stride tricks)
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> transpose_last_two(const Tensor<T> &x) {
    if (x.rank() < 2) {
        throw ShapeError("transpose_last_two: rank must be >= 2, got " + shape_str(x.shape()));
    }
    const int64_t rows = x.dim(-2), cols = x.dim(-1);
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);

    Tensor<T> out(out_shape);
    const int64_t slices = x.numel() / (rows * cols);
    const T *xp = x.data().data();
    T *op = out.data().data();
    for (int64_t s = 0; s < slices; ++s) {
        const T *src = xp + s * rows * cols;
        T *dst = op + s * rows * cols;
        for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
    }

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out, rows, cols, slices](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            T *dx = adj.of(x).data();
            for (int64_t s = 0; s < slices; ++s) {
                const T *src = dout->data() + s * rows * cols;
                T *dst = dx + s * rows * cols;
                for (int64_t j = 0; j < cols; ++j)
                    for (int64_t i = 0; i < rows; ++i) dst[i * cols + j] += src[j * rows + i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise add / sub / mul, scalar scaling, broadcast bias
// ---------------------------------------------------------------------------
namespace detail {

template <typename T>
void check_same_shape(const char *op, const Tensor<T> &a, const Tensor<T> &b) {
    if (!same_shape(a, b)) {
        throw ShapeError(std::string(op) + ": shapes disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
    detail::check_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    const auto av = a.data(), bv = b.data();
    auto ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];

    if (detail::should_record(a, b)) {
        out.mark_from_op();
        active_tape<T>()->record([a, b, out](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            if (a.participates_in_grad()) {
                auto da = adj.of(a);
                for (size_t i = 0; i < da.size(); ++i) da[i] += (*dout)[i];
            }
            if (b.participates_in_grad()) {
                auto db = adj.of(b);
                for (size_t i = 0; i < db.size(); ++i) db[i] += (*dout)[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
    detail::check_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    const auto av = a.data(), bv = b.data();
    auto ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];

    if (detail::should_record(a, b)) {
        out.mark_from_op();
        active_tape<T>()->record([a, b, out](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            if (a.participates_in_grad()) {
                auto da = adj.of(a);
                for (size_t i = 0; i < da.size(); ++i) da[i] += (*dout)[i];
            }
            if (b.participates_in_grad()) {
                auto db = adj.of(b);
                for (size_t i = 0; i < db.size(); ++i) db[i] -= (*dout)[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
    detail::check_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    const auto av = a.data(), bv = b.data();
    auto ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];

    if (detail::should_record(a, b)) {
        out.mark_from_op();
        active_tape<T>()->record([a, b, out](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            if (a.participates_in_grad()) {
                auto da = adj.of(a);
                const auto bv = b.data();
                for (size_t i = 0; i < da.size(); ++i) da[i] += (*dout)[i] * bv[i];
            }
            if (b.participates_in_grad()) {
                auto db = adj.of(b);
                const auto av = a.data();
                for (size_t i = 0; i < db.size(); ++i) db[i] += (*dout)[i] * av[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T> &x, T s) {
    Tensor<T> out(x.shape());
    const auto xv = x.data();
    auto ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * s;

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out, s](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += (*dout)[i] * s;
        });
    }
    return out;
}

// bias shape must be a trailing suffix of x's shape; it broadcasts over the
// leading dimensions and its adjoint sums back over them.
template <typename T>
Tensor<T> add_bias(const Tensor<T> &x, const Tensor<T> &bias) {
    const int64_t xr = x.rank(), br = bias.rank();
    bool suffix_ok = br >= 1 && br <= xr;
    if (suffix_ok) {
        for (int64_t i = 0; i < br; ++i) {
            if (bias.shape()[br - 1 - i] != x.shape()[xr - 1 - i]) suffix_ok = false;
        }
    }
    if (!suffix_ok) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                         " is not a trailing suffix of " + shape_str(x.shape()));
    }

    const int64_t span = bias.numel();
    const int64_t blocks = x.numel() / span;
    Tensor<T> out(x.shape());
    const auto xv = x.data(), bv = bias.data();
    auto ov = out.data();
    for (int64_t blk = 0; blk < blocks; ++blk) {
        const int64_t base = blk * span;
        for (int64_t j = 0; j < span; ++j) ov[base + j] = xv[base + j] + bv[j];
    }

    if (detail::should_record(x, bias)) {
        out.mark_from_op();
        active_tape<T>()->record([x, bias, out, blocks, span](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            if (x.participates_in_grad()) {
                auto dx = adj.of(x);
                for (size_t i = 0; i < dx.size(); ++i) dx[i] += (*dout)[i];
            }
            if (bias.participates_in_grad()) {
                auto db = adj.of(bias);
                for (int64_t blk = 0; blk < blocks; ++blk) {
                    const int64_t base = blk * span;
                    for (int64_t j = 0; j < span; ++j) db[j] += (*dout)[base + j];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gelu: exact x * Phi(x) with Phi the standard normal CDF (erf form)
// ---------------------------------------------------------------------------
namespace detail {

template <typename T>
T normal_cdf(T x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    return static_cast<T>(0.5 * (1.0 + std::erf(static_cast<double>(x) * kInvSqrt2)));
}

template <typename T>
T normal_pdf(T x) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const double xd = static_cast<double>(x);
    return static_cast<T>(kInvSqrt2Pi * std::exp(-0.5 * xd * xd));
}

}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T> &x) {
    Tensor<T> out(x.shape());
    const auto xv = x.data();
    auto ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * detail::normal_cdf(xv[i]);

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            const auto xv = x.data();
            for (size_t i = 0; i < dx.size(); ++i) {
                const T d = detail::normal_cdf(xv[i]) + xv[i] * detail::normal_pdf(xv[i]);
                dx[i] += (*dout)[i] * d;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension, population variance, then affine
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta,
                     T eps = T(1e-6)) {
    if (x.rank() < 1) throw ShapeError("layer_norm: input has rank 0");
    const int64_t d = x.dim(-1);
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
        throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match feature width " +
                         std::to_string(d));
    }
    if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");

    const int64_t rows = x.numel() / d;
    Tensor<T> out(x.shape());
    std::vector<T> xhat(static_cast<size_t>(x.numel()));
    std::vector<T> inv_std(static_cast<size_t>(rows));

    const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
    auto ov = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T *row = xv.data() + r * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T s = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = s;
        for (int64_t j = 0; j < d; ++j) {
            const T xh = (row[j] - mean) * s;
            xhat[static_cast<size_t>(r * d + j)] = xh;
            ov[r * d + j] = gv[j] * xh + bv[j];
        }
    }

    if (detail::should_record(x, gamma, beta)) {
        out.mark_from_op();
        active_tape<T>()->record(
            [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
             d](Adjoints<T> &adj) {
                const std::vector<T> *dout = adj.find(out);
                if (!dout) return;
                const auto gv = gamma.data();
                if (gamma.participates_in_grad()) {
                    auto dg = adj.of(gamma);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < d; ++j)
                            dg[j] += (*dout)[r * d + j] * xhat[static_cast<size_t>(r * d + j)];
                }
                if (beta.participates_in_grad()) {
                    auto db = adj.of(beta);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < d; ++j) db[j] += (*dout)[r * d + j];
                }
                if (x.participates_in_grad()) {
                    auto dx = adj.of(x);
                    std::vector<T> g(static_cast<size_t>(d));
                    for (int64_t r = 0; r < rows; ++r) {
                        T m1 = T(0), m2 = T(0);
                        for (int64_t j = 0; j < d; ++j) {
                            g[static_cast<size_t>(j)] = (*dout)[r * d + j] * gv[j];
                            m1 += g[static_cast<size_t>(j)];
                            m2 += g[static_cast<size_t>(j)] * xhat[static_cast<size_t>(r * d + j)];
                        }
                        m1 /= static_cast<T>(d);
                        m2 /= static_cast<T>(d);
                        const T s = inv_std[static_cast<size_t>(r)];
                        for (int64_t j = 0; j < d; ++j) {
                            dx[r * d + j] += s * (g[static_cast<size_t>(j)] - m1 -
                                                  xhat[static_cast<size_t>(r * d + j)] * m2);
                        }
                    }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax over the last dimension, max-subtracted for stability
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> softmax_last(const Tensor<T> &x) {
    if (x.rank() < 1) throw ShapeError("softmax_last: input has rank 0");
    const int64_t d = x.dim(-1);
    const int64_t rows = x.numel() / d;

    Tensor<T> out(x.shape());
    const auto xv = x.data();
    auto ov = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T *row = xv.data() + r * d;
        T *orow = ov.data() + r * d;
        T mx = row[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        T total = T(0);
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - mx);
            total += orow[j];
        }
        const T inv = T(1) / total;
        for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
    }

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out, rows, d](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            const auto yv = out.data();
            for (int64_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (int64_t j = 0; j < d; ++j) dot += (*dout)[r * d + j] * yv[r * d + j];
                for (int64_t j = 0; j < d; ++j)
                    dx[r * d + j] += yv[r * d + j] * ((*dout)[r * d + j] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// cross_entropy_logits: mean over the batch of -log softmax(logits)[label]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T> &logits, const std::vector<int> &labels) {
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy_logits: logits must be [batch, classes], got " +
                         shape_str(logits.shape()));
    }
    const int64_t b = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != b) {
        throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) +
                         " labels for batch " + std::to_string(b));
    }
    for (int64_t r = 0; r < b; ++r) {
        if (labels[static_cast<size_t>(r)] < 0 || labels[static_cast<size_t>(r)] >= c) {
            throw IndexError("cross_entropy_logits: label " +
                             std::to_string(labels[static_cast<size_t>(r)]) + " at row " +
                             std::to_string(r) + " outside [0," + std::to_string(c) + ")");
        }
    }

    std::vector<T> probs(static_cast<size_t>(logits.numel()));
    const auto xv = logits.data();
    T loss = T(0);
    for (int64_t r = 0; r < b; ++r) {
        const T *row = xv.data() + r * c;
        T mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T total = T(0);
        for (int64_t j = 0; j < c; ++j) {
            const T e = std::exp(row[j] - mx);
            probs[static_cast<size_t>(r * c + j)] = e;
            total += e;
        }
        const T inv = T(1) / total;
        for (int64_t j = 0; j < c; ++j) probs[static_cast<size_t>(r * c + j)] *= inv;
        const T lse = mx + std::log(total);
        loss += lse - row[labels[static_cast<size_t>(r)]];
    }
    loss /= static_cast<T>(b);
    Tensor<T> out = Tensor<T>::scalar(loss);

    if (detail::should_record(logits)) {
        out.mark_from_op();
        active_tape<T>()->record(
            [logits, out, labels, probs = std::move(probs), b, c](Adjoints<T> &adj) {
                const std::vector<T> *dout = adj.find(out);
                if (!dout) return;
                const T scale = (*dout)[0] / static_cast<T>(b);
                auto dx = adj.of(logits);
                for (int64_t r = 0; r < b; ++r) {
                    for (int64_t j = 0; j < c; ++j) {
                        T p = probs[static_cast<size_t>(r * c + j)];
                        if (j == labels[static_cast<size_t>(r)]) p -= T(1);
                        dx[r * c + j] += scale * p;
                    }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// sum reduction to a scalar
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> sum(const Tensor<T> &x) {
    T total = T(0);
    for (T v : x.data()) total += v;
    Tensor<T> out = Tensor<T>::scalar(total);

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += (*dout)[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout with inverted scaling; identity when p == 0 or not training
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> dropout(const Tensor<T> &x, double p, Rng *rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: probability must lie in [0,1)");
    if (!training || p == 0.0) return x;
    if (!rng) throw StateError("dropout: active dropout requires a random stream");

    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(static_cast<size_t>(x.numel()));
    for (auto &mv : mask) mv = rng->uniform() >= p ? keep_scale : T(0);

    Tensor<T> out(x.shape());
    const auto xv = x.data();
    auto ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out, mask = std::move(mask)](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += (*dout)[i] * mask[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// data-movement ops used by the model: patch flattening, class token, heads
// ---------------------------------------------------------------------------

// [B,C,H,W] -> [B, (H/P)*(W/P), C*P*P]; patches ordered row-major over the
// grid, each flattened channel-major.
template <typename T>
Tensor<T> extract_patches(const Tensor<T> &images, int64_t patch) {
    if (images.rank() != 4) {
        throw ShapeError("extract_patches: expected [B,C,H,W], got " + shape_str(images.shape()));
    }
    const int64_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (patch <= 0 || h % patch != 0 || w % patch != 0) {
        throw ShapeError("extract_patches: patch size " + std::to_string(patch) +
                         " does not tile " + shape_str(images.shape()));
    }
    const int64_t gh = h / patch, gw = w / patch;
    const int64_t np = gh * gw, pd = c * patch * patch;

    Tensor<T> out({b, np, pd});
    const T *xp = images.data().data();
    T *op = out.data().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t gy = 0; gy < gh; ++gy) {
            for (int64_t gx = 0; gx < gw; ++gx) {
                T *dst = op + ((bi * np + gy * gw + gx) * pd);
                for (int64_t ci = 0; ci < c; ++ci) {
                    for (int64_t py = 0; py < patch; ++py) {
                        const T *src = xp + ((bi * c + ci) * h + gy * patch + py) * w + gx * patch;
                        for (int64_t px = 0; px < patch; ++px)
                            dst[(ci * patch + py) * patch + px] = src[px];
                    }
                }
            }
        }
    }

    if (detail::should_record(images)) {
        out.mark_from_op();
        active_tape<T>()->record([images, out, b, c, h, w, patch, gh, gw, np,
                                  pd](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(images);
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t gy = 0; gy < gh; ++gy) {
                    for (int64_t gx = 0; gx < gw; ++gx) {
                        const T *src = dout->data() + ((bi * np + gy * gw + gx) * pd);
                        for (int64_t ci = 0; ci < c; ++ci) {
                            for (int64_t py = 0; py < patch; ++py) {
                                T *dst = dx.data() +
                                         ((bi * c + ci) * h + gy * patch + py) * w + gx * patch;
                                for (int64_t px = 0; px < patch; ++px)
                                    dst[px] += src[(ci * patch + py) * patch + px];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// [B,M,D] + token [D] -> [B,M+1,D], token placed at sequence position 0.
template <typename T>
Tensor<T> prepend_token(const Tensor<T> &x, const Tensor<T> &token) {
    if (x.rank() != 3 || token.rank() != 1 || token.dim(0) != x.dim(2)) {
        throw ShapeError("prepend_token: cannot prepend token " + shape_str(token.shape()) +
                         " to " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0), m = x.dim(1), d = x.dim(2);
    Tensor<T> out({b, m + 1, d});
    const auto xv = x.data(), tv = token.data();
    auto ov = out.data();
    for (int64_t bi = 0; bi < b; ++bi) {
        T *dst = ov.data() + bi * (m + 1) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = tv[j];
        const T *src = xv.data() + bi * m * d;
        std::copy(src, src + m * d, dst + d);
    }

    if (detail::should_record(x, token)) {
        out.mark_from_op();
        active_tape<T>()->record([x, token, out, b, m, d](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            if (token.participates_in_grad()) {
                auto dt = adj.of(token);
                for (int64_t bi = 0; bi < b; ++bi) {
                    const T *src = dout->data() + bi * (m + 1) * d;
                    for (int64_t j = 0; j < d; ++j) dt[j] += src[j];
                }
            }
            if (x.participates_in_grad()) {
                auto dx = adj.of(x);
                for (int64_t bi = 0; bi < b; ++bi) {
                    const T *src = dout->data() + bi * (m + 1) * d + d;
                    T *dst = dx.data() + bi * m * d;
                    for (int64_t j = 0; j < m * d; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return out;
}

// [B,N,D] -> [B,D]: the row at sequence position `index` of every sample.
template <typename T>
Tensor<T> select_token(const Tensor<T> &x, int64_t index) {
    if (x.rank() != 3) {
        throw ShapeError("select_token: expected [B,N,D], got " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    if (index < 0 || index >= n) {
        throw IndexError("select_token: index " + std::to_string(index) + " outside [0," +
                         std::to_string(n) + ")");
    }
    Tensor<T> out({b, d});
    const auto xv = x.data();
    auto ov = out.data();
    for (int64_t bi = 0; bi < b; ++bi) {
        const T *src = xv.data() + (bi * n + index) * d;
        std::copy(src, src + d, ov.data() + bi * d);
    }

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out, b, n, d, index](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            for (int64_t bi = 0; bi < b; ++bi) {
                const T *src = dout->data() + bi * d;
                T *dst = dx.data() + (bi * n + index) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// [B,N,D] -> [B,H,N,D/H]
template <typename T>
Tensor<T> split_heads(const Tensor<T> &x, int64_t heads) {
    if (x.rank() != 3) {
        throw ShapeError("split_heads: expected [B,N,D], got " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    if (heads <= 0 || d % heads != 0) {
        throw ConfigError("split_heads: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const int64_t hd = d / heads;
    Tensor<T> out({b, heads, n, hd});
    const auto xv = x.data();
    auto ov = out.data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t hi = 0; hi < heads; ++hi)
            for (int64_t ni = 0; ni < n; ++ni) {
                const T *src = xv.data() + (bi * n + ni) * d + hi * hd;
                T *dst = ov.data() + (((bi * heads) + hi) * n + ni) * hd;
                std::copy(src, src + hd, dst);
            }

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out, b, n, d, heads, hd](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t hi = 0; hi < heads; ++hi)
                    for (int64_t ni = 0; ni < n; ++ni) {
                        const T *src = dout->data() + (((bi * heads) + hi) * n + ni) * hd;
                        T *dst = dx.data() + (bi * n + ni) * d + hi * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

// [B,H,N,hd] -> [B,N,H*hd]
template <typename T>
Tensor<T> merge_heads(const Tensor<T> &x) {
    if (x.rank() != 4) {
        throw ShapeError("merge_heads: expected [B,H,N,hd], got " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0), heads = x.dim(1), n = x.dim(2), hd = x.dim(3);
    const int64_t d = heads * hd;
    Tensor<T> out({b, n, d});
    const auto xv = x.data();
    auto ov = out.data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t hi = 0; hi < heads; ++hi)
            for (int64_t ni = 0; ni < n; ++ni) {
                const T *src = xv.data() + (((bi * heads) + hi) * n + ni) * hd;
                T *dst = ov.data() + (bi * n + ni) * d + hi * hd;
                std::copy(src, src + hd, dst);
            }

    if (detail::should_record(x)) {
        out.mark_from_op();
        active_tape<T>()->record([x, out, b, n, d, heads, hd](Adjoints<T> &adj) {
            const std::vector<T> *dout = adj.find(out);
            if (!dout) return;
            auto dx = adj.of(x);
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t hi = 0; hi < heads; ++hi)
                    for (int64_t ni = 0; ni < n; ++ni) {
                        const T *src = dout->data() + (bi * n + ni) * d + hi * hd;
                        T *dst = dx.data() + (((bi * heads) + hi) * n + ni) * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

}  // namespace ffvit
