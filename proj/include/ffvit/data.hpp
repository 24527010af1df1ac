#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffvit/errors.hpp"
#include "ffvit/rng.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

// Per-channel normalization applied to every desk dataset: scale bytes to
// [0,1], then (v - 0.5) / 0.5.
constexpr double kPixelMean = 0.5;
constexpr double kPixelStd = 0.5;

template <typename T>
T normalize_pixel(double v01) {
    return static_cast<T>((v01 - kPixelMean) / kPixelStd);
}

template <typename T>
struct Dataset {
    Tensor<T> images;  // [S,3,H,W], normalized
    std::vector<int> labels;
    int64_t class_count = 0;
    std::string name;

    int64_t size() const { return images.dim(0); }
    int64_t image_size() const { return images.dim(2); }

    void validate() const {
        if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3)) {
            throw ConsistencyError("dataset '" + name + "': images must be [S,3,H,H], got " +
                                   shape_str(images.shape()));
        }
        if (size() < 1) throw ConsistencyError("dataset '" + name + "': empty");
        if (static_cast<int64_t>(labels.size()) != size()) {
            throw ConsistencyError("dataset '" + name + "': " + std::to_string(labels.size()) +
                                   " labels for " + std::to_string(size()) + " images");
        }
        for (int label : labels) {
            if (label < 0 || label >= class_count) {
                throw ConsistencyError("dataset '" + name + "': label " + std::to_string(label) +
                                       " outside [0," + std::to_string(class_count) + ")");
            }
        }
    }
};

template <typename T>
struct Batch {
    Tensor<T> images;  // [B,3,H,W]
    std::vector<int> labels;

    int64_t size() const { return images.dim(0); }
};

// ---------------------------------------------------------------------------
// IDX ingestion (MNIST-style): big-endian magic + dims, then raw bytes.
// Grayscale is replicated to three channels.
// ---------------------------------------------------------------------------
namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

inline uint32_t read_u32_be(const std::vector<unsigned char> &bytes, size_t offset,
                            const std::string &path) {
    if (offset + 4 > bytes.size()) {
        throw FormatError("'" + path + "': truncated at byte offset " + std::to_string(offset));
    }
    return (uint32_t(bytes[offset]) << 24) | (uint32_t(bytes[offset + 1]) << 16) |
           (uint32_t(bytes[offset + 2]) << 8) | uint32_t(bytes[offset + 3]);
}

}  // namespace detail

template <typename T = float>
Dataset<T> load_idx(const std::string &images_path, const std::string &labels_path) {
    constexpr uint32_t kImagesMagic = 0x00000803;
    constexpr uint32_t kLabelsMagic = 0x00000801;

    const auto img_bytes = detail::read_file_bytes(images_path);
    const uint32_t img_magic = detail::read_u32_be(img_bytes, 0, images_path);
    if (img_magic != kImagesMagic) {
        throw FormatError("'" + images_path + "': bad magic at byte offset 0 (expected 0x803)");
    }
    const int64_t count = detail::read_u32_be(img_bytes, 4, images_path);
    const int64_t rows = detail::read_u32_be(img_bytes, 8, images_path);
    const int64_t cols = detail::read_u32_be(img_bytes, 12, images_path);
    const size_t pixel_bytes = static_cast<size_t>(count) * rows * cols;
    if (img_bytes.size() != 16 + pixel_bytes) {
        throw FormatError("'" + images_path + "': truncated at byte offset " +
                          std::to_string(img_bytes.size()) + " (need " +
                          std::to_string(16 + pixel_bytes) + " bytes)");
    }

    const auto lbl_bytes = detail::read_file_bytes(labels_path);
    const uint32_t lbl_magic = detail::read_u32_be(lbl_bytes, 0, labels_path);
    if (lbl_magic != kLabelsMagic) {
        throw FormatError("'" + labels_path + "': bad magic at byte offset 0 (expected 0x801)");
    }
    const int64_t lbl_count = detail::read_u32_be(lbl_bytes, 4, labels_path);
    if (lbl_bytes.size() != 8 + static_cast<size_t>(lbl_count)) {
        throw FormatError("'" + labels_path + "': truncated at byte offset " +
                          std::to_string(lbl_bytes.size()));
    }
    if (lbl_count != count) {
        throw ConsistencyError("idx: " + std::to_string(count) + " images but " +
                               std::to_string(lbl_count) + " labels");
    }

    Dataset<T> ds;
    ds.name = "idx";
    ds.images = Tensor<T>({count, 3, rows, cols});
    auto out = ds.images.data();
    const int64_t plane = rows * cols;
    for (int64_t s = 0; s < count; ++s) {
        const unsigned char *src = img_bytes.data() + 16 + s * plane;
        for (int64_t p = 0; p < plane; ++p) {
            const T v = normalize_pixel<T>(src[p] / 255.0);
            out[(s * 3 + 0) * plane + p] = v;
            out[(s * 3 + 1) * plane + p] = v;
            out[(s * 3 + 2) * plane + p] = v;
        }
    }

    ds.labels.resize(static_cast<size_t>(count));
    int max_label = 0;
    for (int64_t s = 0; s < count; ++s) {
        ds.labels[static_cast<size_t>(s)] = lbl_bytes[8 + static_cast<size_t>(s)];
        max_label = std::max(max_label, ds.labels[static_cast<size_t>(s)]);
    }
    ds.class_count = max_label + 1;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary: 3073-byte records, 1 label byte + channel-major 32x32 RGB.
// ---------------------------------------------------------------------------
enum class CifarSplit { train, test };

template <typename T = float>
Dataset<T> load_cifar_file(const std::string &path, Dataset<T> *append_to = nullptr) {
    constexpr int64_t kSide = 32;
    constexpr int64_t kRecord = 1 + 3 * kSide * kSide;

    const auto bytes = detail::read_file_bytes(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
        throw FormatError("'" + path + "': size " + std::to_string(bytes.size()) +
                          " is not a multiple of the " + std::to_string(kRecord) +
                          "-byte record");
    }
    const int64_t count = static_cast<int64_t>(bytes.size()) / kRecord;

    Dataset<T> local;
    Dataset<T> &ds = append_to ? *append_to : local;
    const int64_t base = append_to && ds.images.defined() ? ds.size() : 0;
    Tensor<T> merged({base + count, 3, kSide, kSide});
    if (base > 0) {
        std::copy(ds.images.data().begin(), ds.images.data().end(), merged.data().begin());
    }
    ds.images = merged;
    ds.labels.resize(static_cast<size_t>(base + count));
    ds.class_count = 10;
    ds.name = "cifar";

    auto out = ds.images.data();
    const int64_t plane = kSide * kSide;
    for (int64_t s = 0; s < count; ++s) {
        const unsigned char *rec = bytes.data() + s * kRecord;
        ds.labels[static_cast<size_t>(base + s)] = rec[0];
        for (int64_t c = 0; c < 3; ++c) {
            const unsigned char *src = rec + 1 + c * plane;
            T *dst = out.data() + ((base + s) * 3 + c) * plane;
            for (int64_t p = 0; p < plane; ++p) dst[p] = normalize_pixel<T>(src[p] / 255.0);
        }
    }
    ds.validate();
    return ds;
}

template <typename T = float>
Dataset<T> load_cifar_binary(const std::string &dir, CifarSplit split = CifarSplit::train) {
    namespace fs = std::filesystem;
    if (fs::is_regular_file(dir)) return load_cifar_file<T>(dir);

    Dataset<T> ds;
    if (split == CifarSplit::train) {
        for (int i = 1; i <= 5; ++i) {
            load_cifar_file<T>(dir + "/data_batch_" + std::to_string(i) + ".bin", &ds);
        }
    } else {
        load_cifar_file<T>(dir + "/test_batch.bin", &ds);
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic blobs: a CI-grade stand-in. Each class owns a canonical position
// on a ring and a canonical color; the seed only drives per-sample jitter and
// background noise, so different seeds give datasets from one distribution.
// ---------------------------------------------------------------------------
namespace detail {

inline void class_signature(int cls, int classes, int64_t size, double *cx, double *cy,
                            double rgb[3]) {
    const double angle = 2.0 * 3.14159265358979323846 * cls / classes;
    *cx = size / 2.0 + 0.32 * size * std::cos(angle);
    *cy = size / 2.0 + 0.32 * size * std::sin(angle);

    // hue wheel, saturation 0.9, value 1
    const double h = 6.0 * cls / classes;
    const int sect = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = 0.1, q = 1.0 - 0.9 * f, t = 0.1 + 0.9 * f;
    switch (sect) {
        case 0: rgb[0] = 1; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = 1; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = 1; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = 1; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = 1; break;
        default: rgb[0] = 1; rgb[1] = p; rgb[2] = q; break;
    }
}

}  // namespace detail

template <typename T = float>
Dataset<T> synthetic_blobs(int classes, int per_class, int64_t size, uint64_t seed) {
    if (classes < 2 || per_class < 1 || size < 8) {
        throw ConfigError("synthetic_blobs: need >= 2 classes, >= 1 per class, size >= 8");
    }
    const int64_t total = static_cast<int64_t>(classes) * per_class;
    Rng rng(derive_seed(seed, /*tag=*/0xb10b));

    Dataset<T> ds;
    ds.name = "synthetic_blobs";
    ds.class_count = classes;
    ds.images = Tensor<T>({total, 3, size, size});
    ds.labels.resize(static_cast<size_t>(total));

    auto out = ds.images.data();
    const int64_t plane = size * size;
    for (int64_t s = 0; s < total; ++s) {
        const int cls = static_cast<int>(s % classes);
        ds.labels[static_cast<size_t>(s)] = cls;

        double cx, cy, rgb[3];
        detail::class_signature(cls, classes, size, &cx, &cy, rgb);
        cx += rng.uniform(-0.06, 0.06) * size;
        cy += rng.uniform(-0.06, 0.06) * size;
        const double sigma = (0.10 + 0.04 * rng.uniform()) * size;
        const double amp = 0.75 + 0.25 * rng.uniform();

        for (int64_t y = 0; y < size; ++y) {
            for (int64_t x = 0; x < size; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const double blob = amp * std::exp(-d2 / (2.0 * sigma * sigma));
                for (int64_t c = 0; c < 3; ++c) {
                    const double noise = 0.25 * rng.uniform();
                    const double v = std::clamp(noise + blob * rgb[c], 0.0, 1.0);
                    out[(s * 3 + c) * plane + y * size + x] = normalize_pixel<T>(v);
                }
            }
        }
    }
    ds.validate();
    return ds;
}

// Nearest-neighbor resize, used to bring loaded images to the model's input
// size (e.g. 28 -> 32).
template <typename T>
Dataset<T> resize_nearest(const Dataset<T> &ds, int64_t new_size) {
    if (new_size == ds.image_size()) return ds;
    const int64_t s = ds.size(), old = ds.image_size();
    Dataset<T> out;
    out.name = ds.name;
    out.labels = ds.labels;
    out.class_count = ds.class_count;
    out.images = Tensor<T>({s, 3, new_size, new_size});
    auto dst = out.images.data();
    const auto src = ds.images.data();
    for (int64_t i = 0; i < s * 3; ++i) {
        for (int64_t y = 0; y < new_size; ++y) {
            const int64_t sy = y * old / new_size;
            for (int64_t x = 0; x < new_size; ++x) {
                const int64_t sx = x * old / new_size;
                dst[i * new_size * new_size + y * new_size + x] =
                    src[i * old * old + sy * old + sx];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation: horizontal flip (p = 0.5) and zero-pad + random crop.
// ---------------------------------------------------------------------------
struct AugmentConfig {
    bool flip = false;
    int64_t crop_pad = 0;
};

template <typename T>
Batch<T> augment(const Batch<T> &batch, const AugmentConfig &cfg, uint64_t seed) {
    const int64_t b = batch.images.dim(0), ch = batch.images.dim(1);
    const int64_t h = batch.images.dim(2), w = batch.images.dim(3);
    if (cfg.crop_pad < 0 || (cfg.crop_pad > 0 && cfg.crop_pad >= std::min(h, w))) {
        throw ConfigError("augment: crop_pad " + std::to_string(cfg.crop_pad) +
                          " must lie in [0, image size " + std::to_string(h) + ")");
    }
    if (!cfg.flip && cfg.crop_pad == 0) return batch;

    Rng rng(derive_seed(seed, /*tag=*/0xa06));
    Batch<T> out;
    out.labels = batch.labels;
    out.images = Tensor<T>(batch.images.shape());
    const auto src = batch.images.data();
    auto dst = out.images.data();

    for (int64_t i = 0; i < b; ++i) {
        const bool flip = cfg.flip && rng.uniform() < 0.5;
        int64_t ox = 0, oy = 0;
        if (cfg.crop_pad > 0) {
            ox = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * cfg.crop_pad + 1)));
            oy = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * cfg.crop_pad + 1)));
        }
        for (int64_t c = 0; c < ch; ++c) {
            const T *sp = src.data() + (i * ch + c) * h * w;
            T *dp = dst.data() + (i * ch + c) * h * w;
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    // coordinates in the zero-padded source
                    const int64_t sx0 = x + ox - cfg.crop_pad;
                    const int64_t sy = y + oy - cfg.crop_pad;
                    const int64_t sx = flip ? w - 1 - sx0 : sx0;
                    T v = T(0);
                    if (sx >= 0 && sx < w && sy >= 0 && sy < h) v = sp[sy * w + sx];
                    dp[y * w + x] = v;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Epoch iteration: a seeded permutation partitioned into batches; the final
// short batch is emitted.
// ---------------------------------------------------------------------------
inline std::vector<std::vector<int64_t>> epoch_index_batches(int64_t dataset_size,
                                                             int64_t batch_size,
                                                             uint64_t shuffle_seed) {
    if (batch_size < 1) throw ConfigError("epoch: batch_size must be >= 1");
    std::vector<int64_t> order(static_cast<size_t>(dataset_size));
    for (int64_t i = 0; i < dataset_size; ++i) order[static_cast<size_t>(i)] = i;

    Rng rng(derive_seed(shuffle_seed, /*tag=*/0x5f1e));
    for (int64_t i = dataset_size - 1; i > 0; --i) {
        const int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    std::vector<std::vector<int64_t>> batches;
    for (int64_t start = 0; start < dataset_size; start += batch_size) {
        const int64_t stop = std::min(start + batch_size, dataset_size);
        batches.emplace_back(order.begin() + start, order.begin() + stop);
    }
    return batches;
}

template <typename T>
Batch<T> gather_batch(const Dataset<T> &ds, std::span<const int64_t> indices) {
    const int64_t b = static_cast<int64_t>(indices.size());
    const int64_t per_image = 3 * ds.image_size() * ds.image_size();
    Batch<T> batch;
    batch.images = Tensor<T>({b, 3, ds.image_size(), ds.image_size()});
    batch.labels.resize(static_cast<size_t>(b));
    const auto src = ds.images.data();
    auto dst = batch.images.data();
    for (int64_t i = 0; i < b; ++i) {
        const int64_t s = indices[static_cast<size_t>(i)];
        std::copy(src.begin() + s * per_image, src.begin() + (s + 1) * per_image,
                  dst.begin() + i * per_image);
        batch.labels[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(s)];
    }
    return batch;
}

template <typename T>
class EpochIterator {
public:
    EpochIterator(const Dataset<T> &ds, int64_t batch_size, uint64_t shuffle_seed)
        : ds_(&ds), batches_(epoch_index_batches(ds.size(), batch_size, shuffle_seed)) {}

    std::optional<Batch<T>> next() {
        if (cursor_ >= batches_.size()) return std::nullopt;
        return gather_batch(*ds_, batches_[cursor_++]);
    }

    size_t batch_count() const { return batches_.size(); }

private:
    const Dataset<T> *ds_;
    std::vector<std::vector<int64_t>> batches_;
    size_t cursor_ = 0;
};

template <typename T>
EpochIterator<T> iterate_epoch(const Dataset<T> &ds, int64_t batch_size, uint64_t shuffle_seed) {
    return EpochIterator<T>(ds, batch_size, shuffle_seed);
}

}  // namespace ffvit
