#pragma once

#include "mitodet/candidates.hpp"
#include "mitodet/core.hpp"
#include "mitodet/net.hpp"
#include "mitodet/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mitodet {

enum class Optimizer { Sgd, Adam };
enum class LossMode {
    PerVoxelMean,  // sum of squared residuals over valid voxels / #valid
    Sum,      // raw sum of squared residuals per candidate
};

struct TrainConfig {
    double lr = 1e-3;
    Optimizer optimizer = Optimizer::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 4;
    int epochs = 100;
    std::uint64_t seed = 0;
    int checkpoint_interval = 0;  // epochs between checkpoint callbacks; 0 = final only
    LossMode loss_mode = LossMode::PerVoxelMean;
    int threads = 1;

    void validate() const {
        if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
        if (batch_size < 1) throw ConfigError("train.batch must be >= 1");
        if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("train.beta1/beta2 must lie in [0,1)");
        if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Squared-error loss against a likelihood target, with padded slices carrying
// no loss and no gradient.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LossGrad {
    double loss = 0.0;
    Volume3<Scalar> grad;
};

template <typename Scalar>
LossGrad<Scalar> mse_loss(const Volume3<Scalar>& output, const Volume3<Scalar>& target,
                          const std::vector<std::uint8_t>* pad_mask = nullptr,
                          LossMode mode = LossMode::PerVoxelMean) {
    if (!output.same_shape(target)) throw ShapeError("mse_loss: output/target shape mismatch");
    if (pad_mask && static_cast<int>(pad_mask->size()) != output.depth)
        throw ShapeError("mse_loss: pad mask length mismatch");

    LossGrad<Scalar> r;
    r.grad = Volume3<Scalar>(output.width, output.height, output.depth);
    std::int64_t valid = 0;
    double sq = 0.0;
    const Eigen::Index slice_n = static_cast<Eigen::Index>(output.width) * output.height;
    for (int t = 0; t < output.depth; ++t) {
        if (pad_mask && (*pad_mask)[static_cast<std::size_t>(t)]) continue;
        auto o = Eigen::Map<const FlatArray<Scalar>>(output.data.data() + slice_n * t, slice_n);
        auto l = Eigen::Map<const FlatArray<Scalar>>(target.data.data() + slice_n * t, slice_n);
        auto g = Eigen::Map<FlatArray<Scalar>>(r.grad.data.data() + slice_n * t, slice_n);
        g = o - l;
        sq += g.template cast<double>().square().sum();
        valid += slice_n;
    }
    const double norm = (mode == LossMode::PerVoxelMean) ? static_cast<double>(std::max<std::int64_t>(valid, 1)) : 1.0;
    r.loss = sq / norm;
    r.grad.data *= static_cast<Scalar>(2.0 / norm);
    return r;
}

// ---------------------------------------------------------------------------
// Parameter updates.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct OptState {
    FlatArray<Scalar> m, v;
    std::int64_t step = 0;
};

template <typename Scalar>
void step(FlatArray<Scalar>& params, const FlatArray<Scalar>& grads, const TrainConfig& cfg,
          OptState<Scalar>& state) {
    if (params.size() != grads.size()) throw ShapeError("step: parameter/gradient size mismatch");
    const Scalar lr = static_cast<Scalar>(cfg.lr);
    if (cfg.optimizer == Optimizer::Sgd) {
        params -= lr * grads;
        ++state.step;
        return;
    }
    if (state.m.size() != params.size()) {
        state.m = FlatArray<Scalar>::Zero(params.size());
        state.v = FlatArray<Scalar>::Zero(params.size());
    }
    ++state.step;
    const Scalar b1 = static_cast<Scalar>(cfg.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg.beta2);
    state.m = b1 * state.m + (Scalar(1) - b1) * grads;
    state.v = b2 * state.v + (Scalar(1) - b2) * grads.square();
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta1, static_cast<double>(state.step)));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta2, static_cast<double>(state.step)));
    params -= lr * (state.m / c1) / ((state.v / c2).sqrt() + static_cast<Scalar>(cfg.adam_eps));
}

// ---------------------------------------------------------------------------
// Epoch loop: seeded shuffle, fixed-order gradient accumulation within each
// batch (batch-mean gradient), per-epoch mean candidate loss.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct TrainResult {
    FlatArray<Scalar> params;
    std::vector<double> loss_curve;  // one mean loss per epoch
    std::uint64_t steps = 0;
};

/// Called every `checkpoint_interval` epochs with the epoch index (0-based),
/// current parameters, and optimizer step count.
template <typename Scalar>
using CheckpointFn = std::function<void(int, const FlatArray<Scalar>&, std::uint64_t)>;

template <typename Scalar>
TrainResult<Scalar> train(const Architecture& arch, const std::vector<CandidateSequence<Scalar>>& cands,
                          const std::vector<Volume3<Scalar>>& targets, const TrainConfig& cfg,
                          const CheckpointFn<Scalar>& checkpoint = nullptr) {
    cfg.validate();
    arch.validate();
    if (cands.empty()) throw ConfigError("train: empty dataset");
    if (cands.size() != targets.size()) throw ShapeError("train: candidate/target count mismatch");
    for (std::size_t i = 0; i < cands.size(); ++i)
        if (!cands[i].volume.same_shape(targets[i]))
            throw ShapeError("train: candidate/target shape mismatch at index " + std::to_string(i));

    Rng rng(cfg.seed);
    TrainResult<Scalar> res;
    res.params = init_params<Scalar>(arch, rng());
    OptState<Scalar> state;

    const int n = static_cast<int>(cands.size());
    std::vector<int> order(cands.size());
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    Workspace<Scalar> ws;
    FlatArray<Scalar> grad_acc = FlatArray<Scalar>::Zero(res.params.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bn = std::min(cfg.batch_size, n - start);
            grad_acc.setZero();
            double batch_loss = 0.0;
            for (int k = 0; k < bn; ++k) {
                const auto& cand = cands[static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)])];
                const auto& tgt = targets[static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)])];
                Tensor4<Scalar> out = forward(arch, res.params, tensor_from_volume(cand.volume), ws, cfg.threads);
                LossGrad<Scalar> lg =
                    mse_loss(volume_from_tensor(out), tgt, &cand.meta.pad_mask, cfg.loss_mode);
                Gradients<Scalar> g = backward(arch, res.params, ws, tensor_from_volume(lg.grad), cfg.threads);
                grad_acc += g.params;
                batch_loss += lg.loss;
            }
            if (!std::isfinite(batch_loss))
                throw DivergedError("training loss became non-finite at epoch " + std::to_string(epoch));
            grad_acc /= static_cast<Scalar>(bn);
            step(res.params, grad_acc, cfg, state);
            epoch_loss += batch_loss;
        }
        res.loss_curve.push_back(epoch_loss / n);
        if (checkpoint && cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0)
            checkpoint(epoch, res.params, static_cast<std::uint64_t>(state.step));
    }
    res.steps = static_cast<std::uint64_t>(state.step);
    return res;
}

}  // namespace mitodet
