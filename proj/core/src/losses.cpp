#include "rcps/losses.hpp"

namespace rcps::loss {

namespace {

void same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    if (!a.defined() || !b.defined())
        throw ArgumentError(std::string(what) + ": undefined tensor");
    if (a.sizes() != b.sizes())
        throw ArgumentError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
    if (a.dim() < 2)
        throw ArgumentError(std::string(what) + ": expected (B, C, ...) tensors");
}

} // namespace

SegLossParts seg_loss(const torch::Tensor& probs, const torch::Tensor& labels, const LossWeights& w)
{
    if (!probs.defined() || !labels.defined())
        throw ArgumentError("seg_loss: undefined tensor");
    if (probs.dim() < 2 || labels.dim() != probs.dim() - 1 || labels.size(0) != probs.size(0) ||
        labels.sizes().slice(1) != probs.sizes().slice(2))
        throw ArgumentError("seg_loss: probabilities " + c10::str(probs.sizes()) + " incompatible with labels " +
                            c10::str(labels.sizes()));
    const auto C = probs.size(1);
    const auto y = labels.to(torch::kLong);
    if (y.numel() > 0 && (y.min().item<std::int64_t>() < 0 || y.max().item<std::int64_t>() >= C))
        throw ArgumentError("seg_loss: label values must lie in [0, " + std::to_string(C - 1) + "]");

    const auto onehot = torch::one_hot(y, C).movedim(-1, 1).to(probs.dtype());
    SegLossParts parts;
    const auto p_true = (probs * onehot).sum(1);
    parts.cross_entropy = -torch::log(p_true.clamp(w.epsilon, 1.0)).mean();

    std::vector<std::int64_t> reduce_dims{0};
    for (std::int64_t d = 2; d < probs.dim(); ++d)
        reduce_dims.push_back(d);
    const auto intersect = (probs * onehot).sum(reduce_dims);
    const auto denom = probs.sum(reduce_dims) + onehot.sum(reduce_dims);
    const auto per_class = 1.0 - (2.0 * intersect + w.dice_smooth) / (denom + w.dice_smooth);
    const std::int64_t first = (w.dice_include_background || C == 1) ? 0 : 1;
    parts.dice = per_class.slice(0, first).mean();
    parts.total = parts.cross_entropy + parts.dice;
    return parts;
}

torch::Tensor sharpen(const torch::Tensor& logits, double T)
{
    if (!(T > 0.0))
        throw ArgumentError("sharpen: temperature must be > 0, got " + std::to_string(T));
    return torch::softmax(logits / T, 1);
}

torch::Tensor pseudo_sup_map(const torch::Tensor& view_probs, const torch::Tensor& target, double eps)
{
    same_shape(view_probs, target, "pseudo_sup_map");
    return -(target * torch::log(view_probs.clamp(eps, 1.0))).sum(1);
}

torch::Tensor kl_map(const torch::Tensor& view_probs, const torch::Tensor& reference, double eps)
{
    same_shape(view_probs, reference, "kl_map");
    return (reference * (torch::log(reference + eps) - torch::log(view_probs + eps))).sum(1);
}

torch::Tensor uncertainty_rectified_loss(const torch::Tensor& view_probs, const torch::Tensor& target,
                                         const torch::Tensor& reference, double eps, torch::Tensor* kl_mean)
{
    same_shape(view_probs, target, "uncertainty_rectified_loss");
    same_shape(view_probs, reference, "uncertainty_rectified_loss");
    const auto D = kl_map(view_probs, reference, eps);
    const auto Lp = pseudo_sup_map(view_probs, target, eps);
    if (kl_mean)
        *kl_mean = D.mean().detach();
    // The weight multiplies each voxel before the reduction.
    return (torch::exp(-D) * Lp + D).mean();
}

torch::Tensor uncertainty_rectified_loss(const torch::Tensor& view_probs, const torch::Tensor& logits, double T,
                                         double eps, torch::Tensor* kl_mean)
{
    const auto z = logits.detach();
    return uncertainty_rectified_loss(view_probs, sharpen(z, T), torch::softmax(z, 1), eps, kl_mean);
}

torch::Tensor consistency_loss(const torch::Tensor& p1, const torch::Tensor& p2, double eps)
{
    same_shape(p1, p2, "consistency_loss");
    const auto dot = (p1 * p2).sum(1);
    const auto n1 = p1.pow(2).sum(1).sqrt().clamp_min(eps);
    const auto n2 = p2.pow(2).sum(1).sqrt().clamp_min(eps);
    return (1.0 - dot / (n1 * n2)).mean();
}

RectifiedParts rectified_pseudo_loss(const torch::Tensor& p1, const torch::Tensor& p2, const torch::Tensor& logits,
                                     const LossWeights& w)
{
    same_shape(p1, p2, "rectified_pseudo_loss");
    same_shape(p1, logits, "rectified_pseudo_loss");
    const auto z = logits.detach();
    const auto target = sharpen(z, w.temperature_T);
    const auto reference = torch::softmax(z, 1);
    RectifiedParts parts;
    torch::Tensor kl1, kl2;
    parts.urp_first = uncertainty_rectified_loss(p1, target, reference, w.epsilon, &kl1);
    parts.urp_second = uncertainty_rectified_loss(p2, target, reference, w.epsilon, &kl2);
    parts.consistency = consistency_loss(p1, p2, w.epsilon);
    parts.kl_mean = 0.5 * (kl1 + kl2);
    parts.total = parts.urp_first + parts.urp_second + w.consistency_weight * parts.consistency;
    return parts;
}

torch::Tensor supervised_total(const torch::Tensor& seg, const torch::Tensor& rp, const torch::Tensor& bc, double alpha,
                               double beta)
{
    if (!seg.defined())
        throw ArgumentError("supervised loss requires a segmentation term (labels missing)");
    return seg + unsupervised_total(rp, bc, alpha, beta);
}

torch::Tensor unsupervised_total(const torch::Tensor& rp, const torch::Tensor& bc, double alpha, double beta)
{
    auto total = torch::zeros({}, torch::kFloat);
    if (rp.defined())
        total = total.to(rp.dtype()) + alpha * rp;
    if (bc.defined())
        total = total.to(bc.dtype()) + beta * bc;
    return total;
}

} // namespace rcps::loss
