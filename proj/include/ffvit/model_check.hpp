#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ffvit/config.hpp"
#include "ffvit/model.hpp"
#include "ffvit/ops.hpp"
#include "ffvit/params.hpp"
#include "ffvit/rng.hpp"
#include "ffvit/tape.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

struct ModelGradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    int64_t checked_coords = 0;
};

// Central-difference validation of the full model loss gradient, in 64-bit.
// Analytic gradients come from one recorded forward/backward; each selected
// parameter coordinate is then perturbed by +/- h around a tape-free forward.
// coords_per_tensor == 0 sweeps every element.
inline ModelGradCheckResult model_grad_check(const ModelConfig &cfg, int64_t batch = 2,
                                             uint64_t seed = 7, double h = 1e-5,
                                             int64_t coords_per_tensor = 0) {
    cfg.validate();
    Rng rng(derive_seed(seed, /*tag=*/0x6c));

    Tensor<double> images = Tensor<double>::randn({batch, 3, cfg.image_size, cfg.image_size}, rng);
    std::vector<int> labels(static_cast<size_t>(batch));
    for (int64_t i = 0; i < batch; ++i) {
        labels[static_cast<size_t>(i)] = static_cast<int>(i % cfg.num_classes);
    }

    ParameterSet<double> params = init_params<double>(cfg, seed);
    const ModelWeights<double> weights = bind_weights(params, cfg);
    const RunContext<double> ctx{Mode::eval, 0.0, nullptr};

    auto loss_value = [&]() {
        return cross_entropy_logits(model_forward(images, weights, cfg, ctx), labels).item();
    };

    params.zero_grad();
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> loss =
            cross_entropy_logits(model_forward(images, weights, cfg, ctx), labels);
        tape.backward(loss);
    }

    ModelGradCheckResult result;
    for (auto &entry : params) {
        const std::vector<double> analytic(entry.tensor.grad().begin(),
                                           entry.tensor.grad().end());
        auto values = entry.tensor.data();

        std::vector<size_t> coords;
        if (coords_per_tensor <= 0 ||
            coords_per_tensor >= static_cast<int64_t>(values.size())) {
            coords.resize(values.size());
            for (size_t i = 0; i < values.size(); ++i) coords[i] = i;
        } else {
            for (int64_t i = 0; i < coords_per_tensor; ++i) {
                coords.push_back(static_cast<size_t>(rng.below(values.size())));
            }
        }

        for (size_t i : coords) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = loss_value();
            values[i] = saved - h;
            const double down = loss_value();
            values[i] = saved;

            const double central = (up - down) / (2.0 * h);
            const double err =
                std::fabs(analytic[i] - central) / std::max(1.0, std::fabs(analytic[i]));
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_param = entry.name;
            }
            ++result.checked_coords;
        }
    }
    return result;
}

}  // namespace ffvit
