#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "rcps/config.hpp"

/// Confident negative sampling and the bidirectional voxel contrastive loss. Tensors
/// here describe a single image: embeddings are (E, z, y, x), grids are (z, y, x).
namespace rcps::sampling {

struct PseudoLabelGrid {
    torch::Tensor classes;    ///< int64
    torch::Tensor confidence; ///< float, max pooled class probability
};

/// Average-pools `probs` (C, z, y, x) by `stride`, then takes argmax / max over classes.
PseudoLabelGrid downsample_pseudo_labels(const torch::Tensor& probs, int stride);

struct NegativeBank {
    torch::Tensor embeddings; ///< (K, E); empty (0, E) when nothing is eligible
    std::vector<std::int64_t> indices;
    std::vector<std::int64_t> classes;
    std::vector<float> confidences; ///< non-increasing
    int capacity = 0;

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
};

/// Linear indices of the `n` most confident locations whose class differs from
/// `anchor_class`, ordered by confidence (desc) then index (asc).
std::vector<std::int64_t> select_confident(const std::vector<std::int64_t>& classes,
                                           const std::vector<float>& confidence, std::int64_t anchor_class, int n);

NegativeBank sample_confident_negatives(const torch::Tensor& negative_embeddings, const PseudoLabelGrid& negative_labels,
                                        std::int64_t anchor_class, int n, bool detach = true);

/// InfoNCE for one direction with a shared negative set. Anchors and positives are (A, E),
/// negatives (K, E); returns the per-anchor loss (A). Cosines are computed explicitly.
torch::Tensor info_nce(const torch::Tensor& anchors, const torch::Tensor& positives, const torch::Tensor& negatives,
                       double tau);

struct ContrastiveOptions {
    double tau = 0.1;
    int num_negatives = 400;
    /// 0: every location is an anchor. Otherwise a uniform subsample without replacement.
    int anchors_per_image = 0;
    bool detach_negatives = true;
};

/// Mean over anchors of L_c(psi1, psi2) + L_c(psi2, psi1). Negatives are drawn once per
/// anchor pseudo class present in `labels`; anchors with an empty bank contribute 0.
/// `rng` is only consulted when anchors are subsampled.
torch::Tensor bidirectional_contrastive_loss(const torch::Tensor& u1, const torch::Tensor& u2,
                                             const torch::Tensor& u_negative, const PseudoLabelGrid& labels,
                                             const PseudoLabelGrid& negative_labels, const ContrastiveOptions& opts,
                                             std::mt19937_64* rng = nullptr);

} // namespace rcps::sampling
