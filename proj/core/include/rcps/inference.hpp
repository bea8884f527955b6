#pragma once

#include <functional>
#include <vector>

#include <torch/torch.h>

#include "rcps/metrics.hpp"
#include "rcps/network.hpp"

namespace rcps::infer {

/// (1, 1, nz, ny, nx) float tensor sharing the x-fastest layout of the volume.
torch::Tensor to_tensor(const Volume& v);
/// (nz, ny, nx) int64 tensor.
torch::Tensor to_tensor(const LabelMap& y);
LabelMap labels_from_tensor(const torch::Tensor& classes, int num_classes);

/// Window origins along one axis: 0, s, 2s, ... with s = max(1, floor(patch*(1-overlap))),
/// plus a final window flush with the end.
std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap);

/// Maps a (1, 1, pz, py, px) patch to (1, C, pz, py, px) probabilities.
using PatchPredictor = std::function<torch::Tensor(const torch::Tensor&)>;

struct SlidingWindowResult {
    torch::Tensor probs;    ///< (C, nz, ny, nx), uniform average of covering windows
    torch::Tensor coverage; ///< (nz, ny, nx) window count per voxel
};

SlidingWindowResult sliding_window_probs(const PatchPredictor& predict, const Volume& v, const SlidingWindowConfig& cfg);

/// Runs the model in eval mode without gradients.
SlidingWindowResult sliding_window_probs(net::UNet3d& model, const Volume& v, const SlidingWindowConfig& cfg);

LabelMap sliding_window_predict(net::UNet3d& model, const Volume& v, const SlidingWindowConfig& cfg);

struct EvaluationOutput {
    metrics::EvaluationTable table;
    std::vector<LabelMap> predictions;
};

/// Predicts every case and aggregates DSC/HD95/ASD per class.
EvaluationOutput evaluate(net::UNet3d& model, const std::vector<LabeledCase>& cases, const SlidingWindowConfig& cfg,
                          bool spacing_aware = false, bool keep_predictions = false);

} // namespace rcps::infer
