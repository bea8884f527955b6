#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "rcps/losses.hpp"
#include "rcps/network.hpp"
#include "rcps/sampling.hpp"

namespace rcps::train {

/// lr0 * (1 - step/max_steps)^power.
double poly_lr(std::int64_t step, std::int64_t max_steps, double lr0, double power);

/// lambda_max * exp(-5 (1 - min(epoch/warmup_epochs, 1))^2).
double gaussian_warmup(double epoch, int warmup_epochs, double lambda_max);

struct ScheduleState {
    std::int64_t step = 0;
    std::int64_t max_steps = 0;
    std::int64_t epoch = 0;
    double lr = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
};

/// ceil(M / batch_unlabeled); falls back to the labeled split when there is no unlabeled data.
std::int64_t steps_per_epoch(const TrainConfig& cfg, std::size_t num_labeled, std::size_t num_unlabeled);

ScheduleState schedule_at(const TrainConfig& cfg, std::int64_t step, std::int64_t steps_per_epoch);

/// Geometrically augmented patches for one optimization step.
struct Batch {
    std::vector<Volume> labeled;
    std::vector<LabelMap> labels;
    std::vector<Volume> unlabeled;
};

/// Deterministic in (cfg.seed, step): the labeled split is cycled, the unlabeled split is
/// visited once per epoch in a seeded permutation.
Batch assemble_batch(const Dataset& ds, const TrainConfig& cfg, std::int64_t step, std::int64_t steps_per_epoch);

/// Optional diagnostics gathered during train_step.
struct StepProbe {
    /// L2 norm of d(total unsupervised loss)/d(parameters), computed before the update.
    double unsupervised_grad_norm = -1.0;
    /// Parameter deltas applied by the optimizer step, flattened.
    torch::Tensor update;
};

/// One iteration: intensity views, forward passes, seg / rectified pseudo / contrastive
/// losses on both subsets, ell_sup + ell_unsup, one SGD update. `rng` drives the views
/// and anchor subsampling.
loss::LossReport train_step(const Batch& batch, net::UNet3d& model, torch::optim::SGD& optimizer,
                            const ScheduleState& schedule, const TrainConfig& cfg, Rng& rng, StepProbe* probe = nullptr);

/// SGD with momentum; weight decay on convolution kernels only.
std::unique_ptr<torch::optim::SGD> make_optimizer(net::UNet3d& model, const TrainConfig& cfg);

struct LogRow {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double lr = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    loss::LossReport report;
};

/// Columns: step,epoch,lr,alpha,beta,seg,rp,bc,sup_total,unsup_total,kl_mean.
void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const LogRow& row);
std::vector<LogRow> read_log(const std::filesystem::path& path);

struct FitOptions {
    /// Run directory for logs and checkpoints; nothing is written when empty.
    std::filesystem::path run_dir;
    /// Checkpoint directory to continue from.
    std::optional<std::filesystem::path> resume_from;
    /// Stops after this many total steps (simulates interruption); the schedule horizon is unchanged.
    std::optional<std::int64_t> stop_at_step;
    /// Invoked after every step.
    std::function<void(const LogRow&)> on_step;
};

struct FitResult {
    net::UNet3d model{nullptr};
    std::int64_t steps_done = 0;
    std::int64_t max_steps = 0;
    std::vector<LogRow> log;
    std::vector<std::filesystem::path> checkpoints;
};

/// Runs epochs * steps_per_epoch train steps (fixed budget, no early stopping).
FitResult fit(const Dataset& ds, const RunConfig& cfg, const FitOptions& opts = {});

} // namespace rcps::train
