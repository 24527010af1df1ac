#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "ffvit/errors.hpp"

namespace ffvit {

enum class Variant {
    ff_only,             // token FF + feature FF per block
    attention_baseline,  // multi-head attention + feature FF (ViT-style)
    attention_only       // attention over tokens + attention over features
};

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::ff_only: return "ff_only";
        case Variant::attention_baseline: return "attention_baseline";
        case Variant::attention_only: return "attention_only";
    }
    throw ConfigError("unknown variant value");
}

inline Variant variant_from_string(std::string_view s) {
    if (s == "ff_only") return Variant::ff_only;
    if (s == "attention_baseline") return Variant::attention_baseline;
    if (s == "attention_only") return Variant::attention_only;
    throw ConfigError("unknown variant '" + std::string(s) + "'");
}

struct ModelConfig {
    int64_t image_size = 224;
    int64_t patch_size = 16;
    int64_t channels = 3;
    int64_t dim = 192;
    int64_t depth = 12;
    int64_t feature_expansion = 4;
    int64_t token_hidden = 788;  // absolute hidden width of the token FF
    int64_t heads = 3;           // attention variants only
    int64_t num_classes = 1000;
    Variant variant = Variant::ff_only;
    double dropout = 0.0;

    // Patch-grid tokens plus the class token.
    int64_t num_tokens() const {
        const int64_t g = image_size / patch_size;
        return g * g + 1;
    }

    int64_t feature_hidden() const { return feature_expansion * dim; }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
            throw ConfigError("config: image_size " + std::to_string(image_size) +
                              " must be a positive multiple of patch_size " +
                              std::to_string(patch_size));
        }
        if (channels != 3) throw ConfigError("config: channels must be 3");
        if (dim <= 0 || depth <= 0 || feature_expansion <= 0 || token_hidden <= 0 ||
            num_classes <= 0) {
            throw ConfigError("config: widths, depth, and class count must be positive");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw ConfigError("config: dropout must lie in [0,1)");
        }
        if (variant != Variant::ff_only) {
            if (heads <= 0 || dim % heads != 0) {
                throw ConfigError("config: dim " + std::to_string(dim) + " not divisible by " +
                                  std::to_string(heads) + " heads");
            }
        }
    }
};

// Tiny/Base/Large geometries at 224px. The token FF hidden width is four
// times the token count, which lands all three parameter budgets within 2%
// of the published FF-only sizes (7.7M / 62M / 206M).
inline ModelConfig build_preset(std::string_view name) {
    ModelConfig cfg;
    if (name == "tiny") {
        cfg.patch_size = 16;
        cfg.dim = 192;
        cfg.depth = 12;
        cfg.heads = 3;
    } else if (name == "base") {
        cfg.patch_size = 16;
        cfg.dim = 768;
        cfg.depth = 12;
        cfg.heads = 12;
    } else if (name == "large") {
        cfg.patch_size = 32;
        cfg.dim = 1024;
        cfg.depth = 24;
        cfg.heads = 16;
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "' (tiny|base|large)");
    }
    cfg.token_hidden = 4 * cfg.num_tokens();
    cfg.validate();
    return cfg;
}

// Small geometry for gradient checks and desk-scale training runs.
inline ModelConfig build_reduced_config(Variant variant = Variant::ff_only) {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.num_classes = 10;
    cfg.variant = variant;
    cfg.token_hidden = 4 * cfg.num_tokens();
    cfg.validate();
    return cfg;
}

// Exact learnable-element count, closed form. Kept independent of the
// ParameterSet enumeration so the two can cross-check each other.
inline int64_t param_count(const ModelConfig &cfg) {
    cfg.validate();
    const int64_t p = cfg.patch_size, d = cfg.dim, n = cfg.num_tokens();
    const int64_t t = cfg.token_hidden, f = cfg.feature_hidden();

    const int64_t patch_embed = 3 * p * p * d + d;
    const int64_t class_token = d;
    const int64_t pos_embed = n * d;
    const int64_t token_ff = n * t + t + t * n + n;
    const int64_t feature_ff = d * f + f + f * d + d;
    const int64_t attention = 4 * (d * d + d);
    const int64_t feature_attention = 4 * (n * n + n);
    const int64_t norms = 4 * d;

    int64_t per_block = norms;
    switch (cfg.variant) {
        case Variant::ff_only: per_block += token_ff + feature_ff; break;
        case Variant::attention_baseline: per_block += attention + feature_ff; break;
        case Variant::attention_only: per_block += attention + feature_attention; break;
    }

    const int64_t final_norm = 2 * d;
    const int64_t head = d * cfg.num_classes + cfg.num_classes;
    return patch_embed + class_token + pos_embed + cfg.depth * per_block + final_norm + head;
}

// Published FF-only parameter budgets, for delta reporting.
inline int64_t reference_param_count(std::string_view preset) {
    if (preset == "tiny") return 7700000;
    if (preset == "base") return 62000000;
    if (preset == "large") return 206000000;
    throw ConfigError("unknown preset '" + std::string(preset) + "'");
}

// ---------------------------------------------------------------------------
// key=value configuration text (config files and the checkpoint blob)
// ---------------------------------------------------------------------------
using KvMap = std::map<std::string, std::string>;

inline KvMap parse_kv_lines(const std::string &text) {
    KvMap out;
    std::istringstream in(text);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" +
                              line + "'");
        }
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

// std::map iterates keys in sorted order, which is the canonical layout.
inline std::string serialize_kv_lines(const KvMap &kv) {
    std::string out;
    for (const auto &[k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

namespace detail {

inline int64_t kv_int(const KvMap &kv, const std::string &key, int64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception &) {
        throw ConfigError("config: key '" + key + "' has non-integer value '" + it->second + "'");
    }
}

inline double kv_double(const KvMap &kv, const std::string &key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception &) {
        throw ConfigError("config: key '" + key + "' has non-numeric value '" + it->second + "'");
    }
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline ModelConfig model_config_from_kv(const KvMap &kv, const std::string &prefix = "") {
    ModelConfig cfg;
    cfg.image_size = detail::kv_int(kv, prefix + "image_size", cfg.image_size);
    cfg.patch_size = detail::kv_int(kv, prefix + "patch_size", cfg.patch_size);
    cfg.channels = detail::kv_int(kv, prefix + "channels", cfg.channels);
    cfg.dim = detail::kv_int(kv, prefix + "dim", cfg.dim);
    cfg.depth = detail::kv_int(kv, prefix + "depth", cfg.depth);
    cfg.feature_expansion = detail::kv_int(kv, prefix + "feature_expansion", cfg.feature_expansion);
    cfg.token_hidden = detail::kv_int(kv, prefix + "token_hidden", 0);
    cfg.heads = detail::kv_int(kv, prefix + "heads", cfg.heads);
    cfg.num_classes = detail::kv_int(kv, prefix + "num_classes", cfg.num_classes);
    if (auto it = kv.find(prefix + "variant"); it != kv.end()) {
        cfg.variant = variant_from_string(it->second);
    }
    cfg.dropout = detail::kv_double(kv, prefix + "dropout", cfg.dropout);
    if (cfg.token_hidden == 0) cfg.token_hidden = 4 * cfg.num_tokens();
    cfg.validate();
    return cfg;
}

inline void model_config_to_kv(const ModelConfig &cfg, KvMap &kv, const std::string &prefix = "") {
    kv[prefix + "image_size"] = std::to_string(cfg.image_size);
    kv[prefix + "patch_size"] = std::to_string(cfg.patch_size);
    kv[prefix + "channels"] = std::to_string(cfg.channels);
    kv[prefix + "dim"] = std::to_string(cfg.dim);
    kv[prefix + "depth"] = std::to_string(cfg.depth);
    kv[prefix + "feature_expansion"] = std::to_string(cfg.feature_expansion);
    kv[prefix + "token_hidden"] = std::to_string(cfg.token_hidden);
    kv[prefix + "heads"] = std::to_string(cfg.heads);
    kv[prefix + "num_classes"] = std::to_string(cfg.num_classes);
    kv[prefix + "variant"] = to_string(cfg.variant);
    kv[prefix + "dropout"] = detail::format_double(cfg.dropout);
}

}  // namespace ffvit
