#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ffvit/config.hpp"
#include "ffvit/errors.hpp"
#include "ffvit/optim.hpp"
#include "ffvit/params.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

// On-disk training snapshot. The format is bit-exact: save -> load -> save
// reproduces the file byte for byte.
//
//   "FFVT" | u32 version | u32 blob_len + config blob (sorted key=value)
//   | u32 count + framed parameter tensors
//   | u32 count + framed optimizer tensors (m.<name>, v.<name>)
//   | u64 step | 4 x u64 rng state
//
// Tensor framing: u16 name_len, name, u8 rank, u32 dims, f32 row-major data.
// All integers and floats little-endian.
struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    ParameterSet<float> params;
    OptimizerState<float> opt;
    uint64_t step = 0;
    int64_t epoch = 0;
    double best_metric = 0.0;
    std::array<uint64_t, 4> rng_state{};
};

namespace detail {

inline void put_u16(std::string &out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string &out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string &out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string &out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char> &bytes, const std::string &path)
        : bytes_(bytes), path_(path) {}

    uint16_t u16() { return static_cast<uint16_t>(le(2)); }
    uint32_t u32() { return static_cast<uint32_t>(le(4)); }
    uint64_t u64() { return le(8); }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool exhausted() const { return pos_ == bytes_.size(); }
    size_t position() const { return pos_; }

private:
    void need(size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw CorruptionError("checkpoint '" + path_ + "': truncated at byte offset " +
                                  std::to_string(pos_));
        }
    }
    uint64_t le(size_t n) {
        need(n);
        uint64_t v = 0;
        for (size_t i = 0; i < n; ++i) v |= static_cast<uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }

    const std::vector<unsigned char> &bytes_;
    std::string path_;
    size_t pos_ = 0;
};

inline void frame_tensor(std::string &out, const std::string &name, const Tensor<float> &t) {
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (float v : t.data()) put_f32(out, v);
}

inline std::pair<std::string, Tensor<float>> read_tensor(ByteReader &r) {
    const uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    const uint8_t rank = static_cast<uint8_t>(r.str(1)[0]);
    Shape shape(rank);
    for (auto &d : shape) d = r.u32();
    std::vector<float> values(static_cast<size_t>(shape_numel(shape)));
    for (auto &v : values) v = r.f32();
    return {std::move(name), Tensor<float>::from_values(std::move(shape), std::move(values))};
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint &ckpt) {
    constexpr uint32_t kVersion = 1;

    KvMap kv;
    model_config_to_kv(ckpt.model, kv, "model.");
    train_config_to_kv(ckpt.train, kv, "train.");
    kv["epoch"] = std::to_string(ckpt.epoch);
    kv["best_metric"] = detail::format_double(ckpt.best_metric);
    const std::string blob = serialize_kv_lines(kv);

    std::string out = "FFVT";
    detail::put_u32(out, kVersion);
    detail::put_u32(out, static_cast<uint32_t>(blob.size()));
    out += blob;

    detail::put_u32(out, static_cast<uint32_t>(ckpt.params.size()));
    for (const auto &e : ckpt.params) detail::frame_tensor(out, e.name, e.tensor);

    detail::put_u32(out, static_cast<uint32_t>(2 * ckpt.opt.m.size()));
    for (const auto &e : ckpt.opt.m) detail::frame_tensor(out, "m." + e.name, e.tensor);
    for (const auto &e : ckpt.opt.v) detail::frame_tensor(out, "v." + e.name, e.tensor);

    detail::put_u64(out, ckpt.step);
    for (uint64_t w : ckpt.rng_state) detail::put_u64(out, w);
    return out;
}

inline void save_checkpoint(const Checkpoint &ckpt, const std::string &path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: short write to '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    detail::ByteReader r(bytes, path);

    if (r.str(4) != "FFVT") throw FormatError("checkpoint '" + path + "': bad magic");
    const uint32_t version = r.u32();
    if (version != 1) {
        throw FormatError("checkpoint '" + path + "': unsupported version " +
                          std::to_string(version));
    }

    const uint32_t blob_len = r.u32();
    const KvMap kv = parse_kv_lines(r.str(blob_len));

    Checkpoint ckpt;
    ckpt.model = model_config_from_kv(kv, "model.");
    ckpt.train = train_config_from_kv(kv, "train.");
    ckpt.epoch = detail::kv_int(kv, "epoch", 0);
    ckpt.best_metric = detail::kv_double(kv, "best_metric", 0.0);

    const auto expected = expected_param_shapes(ckpt.model);
    const uint32_t n_params = r.u32();
    if (n_params != expected.size()) {
        throw CorruptionError("checkpoint '" + path + "': " + std::to_string(n_params) +
                              " tensors but config expects " + std::to_string(expected.size()));
    }
    for (const NamedShape &spec : expected) {
        auto [name, tensor] = detail::read_tensor(r);
        if (name != spec.name || tensor.shape() != spec.shape) {
            throw CorruptionError("checkpoint '" + path + "': tensor '" + name + "' " +
                                  shape_str(tensor.shape()) + " does not match expected '" +
                                  spec.name + "' " + shape_str(spec.shape));
        }
        tensor.set_requires_grad(true);
        ckpt.params.add(std::move(name), std::move(tensor));
    }

    const uint32_t n_opt = r.u32();
    if (n_opt != 2 * expected.size()) {
        throw CorruptionError("checkpoint '" + path + "': optimizer tensor count " +
                              std::to_string(n_opt) + " does not match config");
    }
    for (const char *prefix : {"m.", "v."}) {
        for (const NamedShape &spec : expected) {
            auto [name, tensor] = detail::read_tensor(r);
            if (name != prefix + spec.name || tensor.shape() != spec.shape) {
                throw CorruptionError("checkpoint '" + path + "': optimizer tensor '" + name +
                                      "' does not match expected '" + prefix + spec.name + "'");
            }
            auto &set = name[0] == 'm' ? ckpt.opt.m : ckpt.opt.v;
            set.add(spec.name, std::move(tensor));
        }
    }

    ckpt.step = r.u64();
    ckpt.opt.step = static_cast<int64_t>(ckpt.step);
    for (auto &w : ckpt.rng_state) w = r.u64();

    if (!r.exhausted()) {
        throw CorruptionError("checkpoint '" + path + "': " +
                              std::to_string(bytes.size() - r.position()) +
                              " trailing bytes after step/rng state");
    }
    return ckpt;
}

}  // namespace ffvit
