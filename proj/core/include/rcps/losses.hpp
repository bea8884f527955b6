#pragma once

#include <optional>

#include <torch/torch.h>

#include "rcps/config.hpp"

/// Segmentation, pseudo-supervision and consistency losses. Every probability or logit
/// tensor is laid out (B, C, spatial...), with classes on dim 1; per-voxel maps drop dim 1.
/// Scalar losses are means over batch and voxels unless stated otherwise.
namespace rcps::loss {

struct SegLossParts {
    torch::Tensor cross_entropy;
    torch::Tensor dice;
    torch::Tensor total;
};

/// Mean voxel cross-entropy plus soft Dice loss. Dice sums run over the whole batch;
/// `labels` holds class indices (B, spatial...) as int64.
SegLossParts seg_loss(const torch::Tensor& probs, const torch::Tensor& labels, const LossWeights& w = {});

/// softmax(logits / T) over the class dim.
torch::Tensor sharpen(const torch::Tensor& logits, double T);

/// Per-voxel soft cross-entropy: -sum_c target_c * log(clamp(view_c, eps, 1)).
torch::Tensor pseudo_sup_map(const torch::Tensor& view_probs, const torch::Tensor& target, double eps = 1e-8);

/// Per-voxel KL(reference || view) = sum_c ref_c * log((ref_c + eps) / (view_c + eps)).
torch::Tensor kl_map(const torch::Tensor& view_probs, const torch::Tensor& reference, double eps = 1e-8);

/// mean_v( exp(-D_v) * Lp_v + D_v ), with D from kl_map(view, reference) and Lp from
/// pseudo_sup_map(view, target). `target` and `reference` are used as given (not detached).
torch::Tensor uncertainty_rectified_loss(const torch::Tensor& view_probs, const torch::Tensor& target,
                                         const torch::Tensor& reference, double eps = 1e-8,
                                         torch::Tensor* kl_mean = nullptr);

/// Same, deriving the sharpened target and reference from detached logits of the original input.
torch::Tensor uncertainty_rectified_loss(const torch::Tensor& view_probs, const torch::Tensor& logits, double T,
                                         double eps = 1e-8, torch::Tensor* kl_mean = nullptr);

/// Mean over voxels of 1 - cos(p1_v, p2_v), norms floored at eps.
torch::Tensor consistency_loss(const torch::Tensor& p1, const torch::Tensor& p2, double eps = 1e-8);

struct RectifiedParts {
    torch::Tensor urp_first;
    torch::Tensor urp_second;
    torch::Tensor consistency;
    /// Mean per-voxel KL across both views; telemetry only.
    torch::Tensor kl_mean;
    torch::Tensor total;
};

/// urp(view1) + urp(view2) + consistency_weight * cr(view1, view2). `logits` are detached
/// internally: no gradient reaches the original-input branch.
RectifiedParts rectified_pseudo_loss(const torch::Tensor& p1, const torch::Tensor& p2, const torch::Tensor& logits,
                                     const LossWeights& w = {});

/// Per-step scalar telemetry.
struct LossReport {
    double seg = 0.0;
    double rectified_pseudo = 0.0;
    double contrastive = 0.0;
    double total_supervised = 0.0;
    double total_unsupervised = 0.0;
    double uncertainty_mean = 0.0;
};

/// Labeled path requires `seg`; throws ArgumentError otherwise.
torch::Tensor supervised_total(const torch::Tensor& seg, const torch::Tensor& rp, const torch::Tensor& bc,
                               double alpha, double beta);
torch::Tensor unsupervised_total(const torch::Tensor& rp, const torch::Tensor& bc, double alpha, double beta);

} // namespace rcps::loss
