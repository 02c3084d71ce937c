#pragma once

// Training loop: weighted BCE on the crack channel, Adam updates, per-epoch
// seeded shuffling/augmentation, validation F1, and periodic checkpoints.

#include <filesystem>

#include "rhanet/checkpoint.hpp"
#include "rhanet/loss.hpp"
#include "rhanet/metrics.hpp"

namespace rhanet {
namespace train {

struct FitSchedule {
    int epochs = 500;
    int batch_size = 8;
    float lr = 1e-3f;
    uint64_t seed = 0;
    int checkpoint_interval = 50;
    int start_epoch = 0;
    std::string out_dir; // empty: keep checkpoints off disk
    LossConfig loss;
    double threshold = 0.5;
    double tolerance = 2.0;
    bool augment = true;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_f1 = 0;
};

struct FitResult {
    std::vector<EpochStats> history;
    float omega_p = 1.0f;
};

// Negative/positive pixel ratio over the training split.
inline float auto_omega_p(const data::Dataset& ds) {
    int64_t pos = 0, total = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
        const auto& mv = ds.get(i).mask.values();
        total += static_cast<int64_t>(mv.size());
        for (float v : mv) pos += v > 0.5f ? 1 : 0;
    }
    if (pos == 0 || pos == total) return 1.0f;
    return static_cast<float>(static_cast<double>(total - pos) / static_cast<double>(pos));
}

// One forward/backward/update over a batch; returns the batch loss.
inline double train_step(Model<float>& model, Adam<float>& opt, const data::Batch& batch,
                         float omega_p, float eps_clamp) {
    model.training = true;
    const int N = batch.images.dim(0), H = batch.images.dim(2), W = batch.images.dim(3);
    auto probs = model.forward(batch.images);
    auto crack = ops::slice_channels(probs, 1, 2);
    auto target = ops::reshape(batch.masks, Shape{N, 1, H, W});
    auto loss = weighted_bce(crack, target, omega_p, eps_clamp);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value))
        throw NumericsError("training loss is not finite (" + std::to_string(value) + ")");
    model.zero_grads();
    loss.backward();
    opt.step();
    model.zero_grads();
    return value;
}

inline FitResult fit(Model<float>& model, const data::Dataset& train_set,
                     const data::Dataset& val_set, const FitSchedule& sched,
                     Adam<float>* optimizer = nullptr) {
    if (train_set.empty()) throw DataError("fit: empty training set");
    FitResult result;
    result.omega_p = sched.loss.omega_p > 0 ? static_cast<float>(sched.loss.omega_p)
                                            : auto_omega_p(train_set);
    const float eps_clamp = static_cast<float>(sched.loss.eps_clamp);

    Adam<float> local;
    if (!optimizer) {
        local = Adam<float>(model.names.params, {sched.lr});
        optimizer = &local;
    }

    if (!sched.out_dir.empty()) std::filesystem::create_directories(sched.out_dir);
    auto save = [&](int epoch_done) {
        if (sched.out_dir.empty()) return;
        const auto c = make_checkpoint(model, static_cast<uint32_t>(epoch_done), optimizer);
        save_checkpoint(sched.out_dir + "/epoch_" + std::to_string(epoch_done) + ".rhac", c);
    };

    for (int epoch = sched.start_epoch; epoch < sched.epochs; ++epoch) {
        const auto batches =
            data::make_batches(train_set, sched.batch_size, sched.seed, epoch, sched.augment);
        double loss_sum = 0;
        int64_t image_count = 0;
        for (const auto& b : batches) {
            const double loss = train_step(model, *optimizer, b, result.omega_p, eps_clamp);
            loss_sum += loss * b.images.dim(0);
            image_count += b.images.dim(0);
            if (!std::isfinite(loss_sum))
                throw NumericsError("training diverged at epoch " + std::to_string(epoch));
        }
        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.train_loss = loss_sum / static_cast<double>(image_count);
        if (!val_set.empty()) {
            metrics::EvalOptions opts;
            opts.threshold = sched.threshold;
            opts.tolerance = sched.tolerance;
            opts.with_pr_curve = false;
            stats.val_f1 = metrics::evaluate_model(model, val_set, opts).macro.f1;
        }
        result.history.push_back(stats);
        if (sched.checkpoint_interval > 0 && (epoch + 1) % sched.checkpoint_interval == 0)
            save(epoch + 1);
    }
    if (sched.checkpoint_interval <= 0 || sched.epochs % sched.checkpoint_interval != 0 ||
        sched.epochs == sched.start_epoch)
        save(sched.epochs);
    return result;
}

inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open history for writing: " + path);
    f << "epoch,train_loss,val_f1\n";
    f.precision(17);
    for (const auto& e : history) f << e.epoch << "," << e.train_loss << "," << e.val_f1 << "\n";
}

} // namespace train
} // namespace rhanet
