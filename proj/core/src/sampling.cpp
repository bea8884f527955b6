#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "rcps/sampling.hpp"

namespace rcps::sampling {

namespace F = torch::nn::functional;

PseudoLabelGrid downsample_pseudo_labels(const torch::Tensor& probs, int stride)
{
    if (probs.dim() != 4)
        throw ArgumentError("downsample_pseudo_labels expects (C, z, y, x) probabilities, got " + c10::str(probs.sizes()));
    if (stride < 1)
        throw ArgumentError("stride must be >= 1");
    for (int d = 1; d < 4; ++d)
        if (probs.size(d) % stride != 0)
            throw ArgumentError("stride " + std::to_string(stride) + " does not divide spatial axis " + std::to_string(d - 1) +
                                " of extent " + std::to_string(probs.size(d)));
    const auto p = probs.detach();
    const auto pooled = stride == 1 ? p : F::avg_pool3d(p.unsqueeze(0), F::AvgPool3dFuncOptions(stride)).squeeze(0);
    auto [conf, cls] = pooled.max(0);
    return {cls.to(torch::kLong), conf.to(torch::kFloat)};
}

std::vector<std::int64_t> select_confident(const std::vector<std::int64_t>& classes, const std::vector<float>& confidence,
                                           std::int64_t anchor_class, int n)
{
    if (n < 1)
        throw ArgumentError("number of negatives must be >= 1");
    if (classes.size() != confidence.size())
        throw ArgumentError("class and confidence grids differ in size");
    std::vector<std::int64_t> eligible;
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i] != anchor_class)
            eligible.push_back(static_cast<std::int64_t>(i));
    const auto k = std::min<std::size_t>(eligible.size(), static_cast<std::size_t>(n));
    auto before = [&](std::int64_t a, std::int64_t b) {
        const float ca = confidence[static_cast<std::size_t>(a)];
        const float cb = confidence[static_cast<std::size_t>(b)];
        return ca != cb ? ca > cb : a < b;
    };
    std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(k), eligible.end(), before);
    eligible.resize(k);
    return eligible;
}

NegativeBank sample_confident_negatives(const torch::Tensor& negative_embeddings, const PseudoLabelGrid& negative_labels,
                                        std::int64_t anchor_class, int n, bool detach)
{
    if (negative_embeddings.dim() != 4)
        throw ArgumentError("negative embeddings must be (E, z, y, x), got " + c10::str(negative_embeddings.sizes()));
    if (negative_labels.classes.sizes() != negative_embeddings.sizes().slice(1))
        throw ArgumentError("negative pseudo labels " + c10::str(negative_labels.classes.sizes()) +
                            " do not match embedding grid " + c10::str(negative_embeddings.sizes()));
    const auto cls_t = negative_labels.classes.reshape({-1}).to(torch::kLong).contiguous();
    const auto conf_t = negative_labels.confidence.reshape({-1}).to(torch::kFloat).contiguous();
    const std::vector<std::int64_t> cls(cls_t.data_ptr<std::int64_t>(), cls_t.data_ptr<std::int64_t>() + cls_t.numel());
    const std::vector<float> conf(conf_t.data_ptr<float>(), conf_t.data_ptr<float>() + conf_t.numel());

    NegativeBank bank;
    bank.capacity = n;
    bank.indices = select_confident(cls, conf, anchor_class, n);
    for (auto i : bank.indices) {
        bank.classes.push_back(cls[static_cast<std::size_t>(i)]);
        bank.confidences.push_back(conf[static_cast<std::size_t>(i)]);
    }
    const auto E = negative_embeddings.size(0);
    auto flat = negative_embeddings.reshape({E, -1});
    if (detach)
        flat = flat.detach();
    const auto idx = torch::tensor(bank.indices, torch::kLong);
    bank.embeddings = bank.indices.empty() ? torch::zeros({0, E}, negative_embeddings.options())
                                           : flat.index_select(1, idx).t();
    return bank;
}

torch::Tensor info_nce(const torch::Tensor& anchors, const torch::Tensor& positives, const torch::Tensor& negatives,
                       double tau)
{
    if (!(tau > 0.0))
        throw ArgumentError("contrastive temperature must be > 0");
    const auto opts = F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12);
    const auto a = F::normalize(anchors, opts);
    const auto p = F::normalize(positives, opts);
    const auto n = F::normalize(negatives, opts);
    const auto pos = (a * p).sum(1, true) / tau;
    const auto neg = torch::matmul(a, n.t()) / tau;
    return torch::logsumexp(torch::cat({pos, neg}, 1), 1) - pos.squeeze(1);
}

torch::Tensor bidirectional_contrastive_loss(const torch::Tensor& u1, const torch::Tensor& u2,
                                             const torch::Tensor& u_negative, const PseudoLabelGrid& labels,
                                             const PseudoLabelGrid& negative_labels, const ContrastiveOptions& opts,
                                             std::mt19937_64* rng)
{
    if (u1.dim() != 4 || u1.sizes() != u2.sizes())
        throw ArgumentError("contrastive views must be equally shaped (E, z, y, x), got " + c10::str(u1.sizes()) + " and " +
                            c10::str(u2.sizes()));
    if (u_negative.dim() != 4 || u_negative.size(0) != u1.size(0))
        throw ArgumentError("negative embeddings " + c10::str(u_negative.sizes()) + " incompatible with views " +
                            c10::str(u1.sizes()));
    if (labels.classes.sizes() != u1.sizes().slice(1))
        throw ArgumentError("anchor pseudo labels " + c10::str(labels.classes.sizes()) + " misaligned with embeddings " +
                            c10::str(u1.sizes()));

    const auto E = u1.size(0);
    const auto n_locations = u1.numel() / E;
    const auto f1 = u1.reshape({E, -1});
    const auto f2 = u2.reshape({E, -1});
    const auto anchor_cls_t = labels.classes.reshape({-1}).to(torch::kLong).contiguous();
    const auto* anchor_cls = anchor_cls_t.data_ptr<std::int64_t>();

    std::vector<std::int64_t> anchors(static_cast<std::size_t>(n_locations));
    std::iota(anchors.begin(), anchors.end(), 0);
    if (opts.anchors_per_image > 0 && opts.anchors_per_image < n_locations) {
        if (!rng)
            throw ArgumentError("anchor subsampling requires an rng");
        for (std::size_t i = 0; i < static_cast<std::size_t>(opts.anchors_per_image); ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, anchors.size() - 1);
            std::swap(anchors[i], anchors[pick(*rng)]);
        }
        anchors.resize(static_cast<std::size_t>(opts.anchors_per_image));
        std::sort(anchors.begin(), anchors.end());
    }

    // Group anchors by pseudo class; one bank per class.
    std::map<std::int64_t, std::vector<std::int64_t>> by_class;
    for (auto a : anchors)
        by_class[anchor_cls[a]].push_back(a);

    auto total = torch::zeros({}, u1.options());
    for (const auto& [cls, members] : by_class) {
        const auto bank = sample_confident_negatives(u_negative, negative_labels, cls, opts.num_negatives,
                                                     opts.detach_negatives);
        if (bank.empty())
            continue;
        const auto idx = torch::tensor(members, torch::kLong);
        const auto a1 = f1.index_select(1, idx).t();
        const auto a2 = f2.index_select(1, idx).t();
        total = total + info_nce(a1, a2, bank.embeddings, opts.tau).sum() + info_nce(a2, a1, bank.embeddings, opts.tau).sum();
    }
    return total / static_cast<double>(anchors.size());
}

} // namespace rcps::sampling
