#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ffvit/checkpoint.hpp"
#include "ffvit/config.hpp"
#include "ffvit/data.hpp"
#include "ffvit/errors.hpp"
#include "ffvit/model.hpp"
#include "ffvit/optim.hpp"
#include "ffvit/ops.hpp"
#include "ffvit/params.hpp"
#include "ffvit/tape.hpp"

namespace ffvit {

struct EpochRecord {
    int64_t epoch = 0;
    int64_t step = 0;
    double train_loss = 0.0;
    double eval_top1 = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> records;
};

inline std::string csv_header() { return "epoch,step,train_loss,eval_top1,seconds"; }

inline std::string csv_row(const EpochRecord &r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g,%.17g,%.6f",
                  static_cast<long long>(r.epoch), static_cast<long long>(r.step), r.train_loss,
                  r.eval_top1, r.seconds);
    return buf;
}

inline std::string to_csv(const TrainLog &log) {
    std::string out = csv_header() + "\n";
    for (const auto &r : log.records) out += csv_row(r) + "\n";
    return out;
}

// Fraction of samples whose argmax logit matches the label. Ties break
// toward the lowest class index; eval mode, so the pass is deterministic.
template <typename T>
double evaluate_top1(const ParameterSet<T> &params, const ModelConfig &cfg, const Dataset<T> &ds,
                     int64_t batch_size = 64) {
    const ModelWeights<T> weights = bind_weights(params, cfg);
    const RunContext<T> ctx{Mode::eval, 0.0, nullptr};

    int64_t correct = 0;
    for (int64_t start = 0; start < ds.size(); start += batch_size) {
        const int64_t stop = std::min(start + batch_size, ds.size());
        std::vector<int64_t> idx(static_cast<size_t>(stop - start));
        for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
        const Batch<T> batch = gather_batch(ds, idx);

        const Tensor<T> logits = model_forward(batch.images, weights, cfg, ctx);
        const auto lv = logits.data();
        const int64_t c = logits.dim(1);
        for (int64_t r = 0; r < logits.dim(0); ++r) {
            int64_t best = 0;
            for (int64_t j = 1; j < c; ++j) {
                if (lv[r * c + j] > lv[r * c + best]) best = j;
            }
            if (best == batch.labels[static_cast<size_t>(r)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// Full optimization loop: seeded shuffling and augmentation, AdamW with
// warmup+cosine schedule, per-epoch eval, CSV log, and a checkpoint per
// epoch. Single-threaded with a fixed reduction order, so a given seed
// reproduces the loss curve bitwise.
inline TrainLog train(const ModelConfig &model_cfg, TrainConfig train_cfg,
                      const Dataset<float> &dataset, const std::string &out_dir,
                      const std::string &resume_path = {}) {
    model_cfg.validate();
    train_cfg.validate();
    dataset.validate();
    if (dataset.image_size() != model_cfg.image_size) {
        throw ConfigError("train: dataset image size " + std::to_string(dataset.image_size()) +
                          " does not match model image size " +
                          std::to_string(model_cfg.image_size));
    }
    if (dataset.class_count > model_cfg.num_classes) {
        throw ConfigError("train: dataset has more classes than the model head");
    }

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("train: cannot create output directory '" + out_dir + "'");

    const int64_t steps_per_epoch =
        (dataset.size() + train_cfg.batch_size - 1) / train_cfg.batch_size;
    if (train_cfg.warmup_steps < 0) train_cfg.warmup_steps = steps_per_epoch;
    train_cfg.total_steps = steps_per_epoch * train_cfg.epochs;

    ParameterSet<float> params;
    OptimizerState<float> opt;
    Rng rng;
    int64_t start_epoch = 0;
    double best_metric = 0.0;

    if (!resume_path.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_path);
        const KvMap a = [&] { KvMap kv; model_config_to_kv(model_cfg, kv); return kv; }();
        const KvMap b = [&] { KvMap kv; model_config_to_kv(ckpt.model, kv); return kv; }();
        if (a != b) throw ConfigError("train: resume checkpoint was built for another model config");
        params = std::move(ckpt.params);
        opt = std::move(ckpt.opt);
        rng.set_state(ckpt.rng_state);
        start_epoch = ckpt.epoch + 1;
        best_metric = ckpt.best_metric;
    } else {
        params = init_params<float>(model_cfg, train_cfg.seed);
        opt = OptimizerState<float>::zeros_like(params);
        rng.reseed(derive_seed(train_cfg.seed, /*tag=*/0xd80));
    }

    const AugmentConfig aug{train_cfg.flip, train_cfg.crop_pad};
    TrainLog log;

    std::ofstream csv(out_dir + "/train_log.csv",
                      start_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!csv) throw IoError("train: cannot open '" + out_dir + "/train_log.csv'");
    if (start_epoch == 0) csv << csv_header() << "\n";

    for (int64_t epoch = start_epoch; epoch < train_cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const ModelWeights<float> weights = bind_weights(params, model_cfg);

        double loss_sum = 0.0;
        int64_t batch_index = 0;
        EpochIterator<float> epoch_batches =
            iterate_epoch(dataset, train_cfg.batch_size,
                          derive_seed(train_cfg.seed, 0x500 + static_cast<uint64_t>(epoch)));
        while (auto maybe_batch = epoch_batches.next()) {
            Batch<float> batch = *maybe_batch;
            if (aug.flip || aug.crop_pad > 0) {
                batch = augment(batch, aug,
                                derive_seed(train_cfg.seed,
                                            0x9000 + static_cast<uint64_t>(epoch) * 100000 +
                                                static_cast<uint64_t>(batch_index)));
            }

            Tape<float> tape;
            float loss_value;
            {
                TapeScope<float> scope(tape);
                RunContext<float> ctx{Mode::train, model_cfg.dropout, &rng};
                Tensor<float> logits = model_forward(batch.images, weights, model_cfg, ctx);
                Tensor<float> loss = cross_entropy_logits(logits, batch.labels);
                loss_value = loss.item();
                if (!std::isfinite(loss_value)) {
                    throw StateError("train: non-finite loss at step " +
                                     std::to_string(opt.step) + " (epoch " +
                                     std::to_string(epoch) + ")");
                }
                params.zero_grad();
                tape.backward(loss);
            }

            if (train_cfg.grad_clip_norm > 0) clip_grad_norm(params, train_cfg.grad_clip_norm);
            adamw_step(params, opt, train_cfg, lr_at(opt.step, train_cfg));

            loss_sum += static_cast<double>(loss_value);
            ++batch_index;
        }

        const double top1 = evaluate_top1(params, model_cfg, dataset, train_cfg.batch_size);
        best_metric = std::max(best_metric, top1);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        EpochRecord rec{epoch, opt.step, loss_sum / static_cast<double>(batch_index), top1,
                        seconds};
        log.records.push_back(rec);
        csv << csv_row(rec) << "\n";
        csv.flush();
        if (!csv) throw IoError("train: failed writing '" + out_dir + "/train_log.csv'");

        Checkpoint ckpt;
        ckpt.model = model_cfg;
        ckpt.train = train_cfg;
        ckpt.params = params;
        ckpt.opt = opt;
        ckpt.step = static_cast<uint64_t>(opt.step);
        ckpt.epoch = epoch;
        ckpt.best_metric = best_metric;
        ckpt.rng_state = rng.state();
        save_checkpoint(ckpt, out_dir + "/ckpt-" + std::to_string(epoch) + ".bin");
    }
    return log;
}

}  // namespace ffvit
