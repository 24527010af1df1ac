#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ffvit/config.hpp"
#include "ffvit/errors.hpp"
#include "ffvit/ops.hpp"
#include "ffvit/params.hpp"
#include "ffvit/rng.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

enum class Mode { train, eval };

// Per-call execution context. Dropout fires only in train mode; eval mode is
// deterministic and needs no random stream.
template <typename T>
struct RunContext {
    Mode mode = Mode::eval;
    double dropout = 0.0;
    Rng *rng = nullptr;

    bool training() const { return mode == Mode::train; }
};

template <typename T>
struct NormWeights {
    Tensor<T> gamma, beta;
};

template <typename T>
struct FeedForwardWeights {
    Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct AttentionWeights {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct BlockWeights {
    NormWeights<T> norm1, norm2;
    FeedForwardWeights<T> token_ff, feature_ff;  // ff_only (feature_ff also in baseline)
    AttentionWeights<T> attn;                    // attention variants, over tokens
    AttentionWeights<T> feat_attn;               // attention_only, over features
};

template <typename T>
struct ModelWeights {
    Tensor<T> patch_weight, patch_bias, class_token, pos_embed;
    std::vector<BlockWeights<T>> blocks;
    NormWeights<T> final_norm;
    Tensor<T> head_weight, head_bias;
};

// Resolves the canonical dotted names into per-layer structs. Cheap: tensors
// share storage with the ParameterSet.
template <typename T>
ModelWeights<T> bind_weights(const ParameterSet<T> &params, const ModelConfig &cfg) {
    ModelWeights<T> w;
    w.patch_weight = params.at("patch_embed.weight");
    w.patch_bias = params.at("patch_embed.bias");
    w.class_token = params.at("class_token");
    w.pos_embed = params.at("pos_embed");

    auto bind_attention = [&params](const std::string &prefix) {
        AttentionWeights<T> a;
        a.wq = params.at(prefix + ".wq");
        a.bq = params.at(prefix + ".bq");
        a.wk = params.at(prefix + ".wk");
        a.bk = params.at(prefix + ".bk");
        a.wv = params.at(prefix + ".wv");
        a.bv = params.at(prefix + ".bv");
        a.wo = params.at(prefix + ".wo");
        a.bo = params.at(prefix + ".bo");
        return a;
    };

    w.blocks.resize(static_cast<size_t>(cfg.depth));
    for (int64_t i = 0; i < cfg.depth; ++i) {
        const std::string p = "block." + std::to_string(i) + ".";
        BlockWeights<T> &blk = w.blocks[static_cast<size_t>(i)];
        blk.norm1 = {params.at(p + "norm1.gamma"), params.at(p + "norm1.beta")};
        blk.norm2 = {params.at(p + "norm2.gamma"), params.at(p + "norm2.beta")};
        if (cfg.variant == Variant::ff_only) {
            blk.token_ff = {params.at(p + "token_ff.w1"), params.at(p + "token_ff.b1"),
                            params.at(p + "token_ff.w2"), params.at(p + "token_ff.b2")};
        } else {
            blk.attn = bind_attention(p + "attn");
        }
        if (cfg.variant == Variant::attention_only) {
            blk.feat_attn = bind_attention(p + "feat_attn");
        } else {
            blk.feature_ff = {params.at(p + "feature_ff.w1"), params.at(p + "feature_ff.b1"),
                              params.at(p + "feature_ff.w2"), params.at(p + "feature_ff.b2")};
        }
    }

    w.final_norm = {params.at("final_norm.gamma"), params.at("final_norm.beta")};
    w.head_weight = params.at("head.weight");
    w.head_bias = params.at("head.bias");
    return w;
}

// [B,3,H,W] -> [B,N,D]: flatten non-overlapping P x P patches row-major over
// the grid, project to D, prepend the class token, add the positional
// embedding.
template <typename T>
Tensor<T> patch_embed(const Tensor<T> &images, const ModelWeights<T> &w, const ModelConfig &cfg) {
    if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
        images.dim(3) != cfg.image_size) {
        throw ShapeError("patch_embed: expected [B," + std::to_string(cfg.channels) + "," +
                         std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                         "], got " + shape_str(images.shape()));
    }
    Tensor<T> patches = extract_patches(images, cfg.patch_size);
    Tensor<T> projected = add_bias(matmul(patches, w.patch_weight), w.patch_bias);
    Tensor<T> tokens = prepend_token(projected, w.class_token);
    return add_bias(tokens, w.pos_embed);
}

// Feed-forward over the patch dimension: transpose so tokens become the
// trailing axis, run the usual expand/nonlinearity/contract, transpose back.
// The weight shapes bind the layer to one sequence length.
template <typename T>
Tensor<T> token_ff(const Tensor<T> &x, const FeedForwardWeights<T> &w, const RunContext<T> &ctx) {
    if (x.rank() != 3) {
        throw ShapeError("token_ff: expected [B,N,D], got " + shape_str(x.shape()));
    }
    const int64_t n_expected = w.w1.dim(0);
    if (x.dim(1) != n_expected) {
        throw SequenceLengthError("token_ff: layer is fixed to sequence length " +
                                  std::to_string(n_expected) + ", got " +
                                  std::to_string(x.dim(1)));
    }
    Tensor<T> t = transpose_last_two(x);  // [B,D,N]
    Tensor<T> h = gelu(add_bias(matmul(t, w.w1), w.b1));
    h = dropout(h, ctx.dropout, ctx.rng, ctx.training());
    Tensor<T> out = add_bias(matmul(h, w.w2), w.b2);
    out = dropout(out, ctx.dropout, ctx.rng, ctx.training());
    return transpose_last_two(out);
}

// Feed-forward over the feature dimension: the identical map applied to
// every token independently.
template <typename T>
Tensor<T> feature_ff(const Tensor<T> &x, const FeedForwardWeights<T> &w, const RunContext<T> &ctx) {
    if (x.rank() != 3) {
        throw ShapeError("feature_ff: expected [B,N,D], got " + shape_str(x.shape()));
    }
    if (x.dim(2) != w.w1.dim(0)) {
        throw ShapeError("feature_ff: feature width " + std::to_string(x.dim(2)) +
                         " does not match weights " + shape_str(w.w1.shape()));
    }
    Tensor<T> h = gelu(add_bias(matmul(x, w.w1), w.b1));
    h = dropout(h, ctx.dropout, ctx.rng, ctx.training());
    Tensor<T> out = add_bias(matmul(h, w.w2), w.b2);
    return dropout(out, ctx.dropout, ctx.rng, ctx.training());
}

// Pre-norm residual block: token mixing first, then the feature FF,
// mirroring the attention-then-MLP order of the transformer it replaces.
template <typename T>
Tensor<T> linear_block(const Tensor<T> &x, const BlockWeights<T> &w, const RunContext<T> &ctx) {
    Tensor<T> y = add(x, token_ff(layer_norm(x, w.norm1.gamma, w.norm1.beta), w.token_ff, ctx));
    return add(y, feature_ff(layer_norm(y, w.norm2.gamma, w.norm2.beta), w.feature_ff, ctx));
}

namespace detail {

// Scaled dot-product self-attention over the trailing two axes of [B,N,D].
template <typename T>
Tensor<T> self_attention(const Tensor<T> &x, const AttentionWeights<T> &w, int64_t heads,
                         const RunContext<T> &ctx) {
    const int64_t d = x.dim(2);
    if (heads <= 0 || d % heads != 0) {
        throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const int64_t head_dim = d / heads;

    Tensor<T> q = split_heads(add_bias(matmul(x, w.wq), w.bq), heads);
    Tensor<T> k = split_heads(add_bias(matmul(x, w.wk), w.bk), heads);
    Tensor<T> v = split_heads(add_bias(matmul(x, w.wv), w.bv), heads);

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
    Tensor<T> scores = mul_scalar(matmul(q, transpose_last_two(k)), scale);
    Tensor<T> attn = softmax_last(scores);
    Tensor<T> gathered = merge_heads(matmul(attn, v));
    Tensor<T> out = add_bias(matmul(gathered, w.wo), w.bo);
    return dropout(out, ctx.dropout, ctx.rng, ctx.training());
}

}  // namespace detail

// Baseline transformer block: pre-norm multi-head attention over tokens with
// residual, then the feature FF with residual.
template <typename T>
Tensor<T> attention_block(const Tensor<T> &x, const BlockWeights<T> &w, int64_t heads,
                          const RunContext<T> &ctx) {
    Tensor<T> y = add(x, detail::self_attention(layer_norm(x, w.norm1.gamma, w.norm1.beta), w.attn,
                                                heads, ctx));
    return add(y, feature_ff(layer_norm(y, w.norm2.gamma, w.norm2.beta), w.feature_ff, ctx));
}

// Ablation block: attention over tokens, then attention applied along the
// feature dimension (transpose, attend, transpose back). The feature-side
// attention runs single-headed; token counts such as 197 are prime, so no
// nontrivial head split exists there.
template <typename T>
Tensor<T> attention_over_features_block(const Tensor<T> &x, const BlockWeights<T> &w,
                                        int64_t heads, const RunContext<T> &ctx) {
    Tensor<T> y = add(x, detail::self_attention(layer_norm(x, w.norm1.gamma, w.norm1.beta), w.attn,
                                                heads, ctx));
    Tensor<T> yt = transpose_last_two(layer_norm(y, w.norm2.gamma, w.norm2.beta));  // [B,D,N]
    Tensor<T> mixed = detail::self_attention(yt, w.feat_attn, /*heads=*/1, ctx);
    return add(y, transpose_last_two(mixed));
}

// Full classifier: patch embedding, depth blocks of the configured variant,
// final norm, class-token readout, linear head.
template <typename T>
Tensor<T> model_forward(const Tensor<T> &images, const ModelWeights<T> &w, const ModelConfig &cfg,
                        const RunContext<T> &ctx) {
    Tensor<T> x = patch_embed(images, w, cfg);
    for (const BlockWeights<T> &blk : w.blocks) {
        switch (cfg.variant) {
            case Variant::ff_only: x = linear_block(x, blk, ctx); break;
            case Variant::attention_baseline: x = attention_block(x, blk, cfg.heads, ctx); break;
            case Variant::attention_only:
                x = attention_over_features_block(x, blk, cfg.heads, ctx);
                break;
        }
    }
    x = layer_norm(x, w.final_norm.gamma, w.final_norm.beta);
    Tensor<T> cls = select_token(x, 0);  // [B,D]
    return add_bias(matmul(cls, w.head_weight), w.head_bias);
}

template <typename T>
Tensor<T> model_forward(const Tensor<T> &images, const ParameterSet<T> &params,
                        const ModelConfig &cfg, Mode mode = Mode::eval, Rng *rng = nullptr) {
    RunContext<T> ctx{mode, cfg.dropout, rng};
    return model_forward(images, bind_weights(params, cfg), cfg, ctx);
}

}  // namespace ffvit
