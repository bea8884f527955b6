#include <cmath>

#include "rcps/inference.hpp"

namespace rcps::infer {

using torch::indexing::Slice;

torch::Tensor to_tensor(const Volume& v)
{
    const auto& s = v.shape();
    return torch::from_blob(const_cast<float*>(v.data.values.data()), {1, 1, s.nz, s.ny, s.nx}, torch::kFloat).clone();
}

torch::Tensor to_tensor(const LabelMap& y)
{
    const auto& s = y.shape();
    return torch::from_blob(const_cast<std::int32_t*>(y.data.values.data()), {s.nz, s.ny, s.nx}, torch::kInt)
        .to(torch::kLong);
}

LabelMap labels_from_tensor(const torch::Tensor& classes, int num_classes)
{
    if (classes.dim() != 3)
        throw ArgumentError("label tensor must be (z, y, x), got " + c10::str(classes.sizes()));
    const auto c = classes.to(torch::kInt).contiguous();
    LabelMap y;
    y.num_classes = num_classes;
    y.data = Grid<std::int32_t>(Shape3{c.size(2), c.size(1), c.size(0)});
    std::copy(c.data_ptr<std::int32_t>(), c.data_ptr<std::int32_t>() + c.numel(), y.data.values.begin());
    return y;
}

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap)
{
    if (patch < 1 || extent < 1)
        throw ArgumentError("window and extent must be >= 1");
    if (!(overlap >= 0.0 && overlap < 1.0))
        throw ArgumentError("overlap must lie in [0, 1)");
    if (extent <= patch)
        return {0};
    const auto stride = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(static_cast<double>(patch) * (1.0 - overlap))));
    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0; s + patch < extent; s += stride)
        starts.push_back(s);
    starts.push_back(extent - patch);
    return starts;
}

SlidingWindowResult sliding_window_probs(const PatchPredictor& predict, const Volume& v, const SlidingWindowConfig& cfg)
{
    cfg.validate();
    Index3 offset{};
    Volume padded = v;
    padded.data = pad_to_at_least(v.data, cfg.patch_size, &offset);
    const auto& s = padded.shape();
    const auto image = to_tensor(padded);

    const auto zs = window_starts(s.nz, cfg.patch_size.nz, cfg.overlap);
    const auto ys = window_starts(s.ny, cfg.patch_size.ny, cfg.overlap);
    const auto xs = window_starts(s.nx, cfg.patch_size.nx, cfg.overlap);

    torch::Tensor acc;
    auto coverage = torch::zeros({s.nz, s.ny, s.nx}, torch::kFloat);
    for (auto z0 : zs)
        for (auto y0 : ys)
            for (auto x0 : xs) {
                const auto win = std::vector<at::indexing::TensorIndex>{
                    Slice(), Slice(), Slice(z0, z0 + cfg.patch_size.nz), Slice(y0, y0 + cfg.patch_size.ny),
                    Slice(x0, x0 + cfg.patch_size.nx)};
                const auto p = predict(image.index(win));
                if (!acc.defined())
                    acc = torch::zeros({p.size(1), s.nz, s.ny, s.nx}, torch::kFloat);
                acc.index({Slice(), Slice(z0, z0 + cfg.patch_size.nz), Slice(y0, y0 + cfg.patch_size.ny),
                           Slice(x0, x0 + cfg.patch_size.nx)})
                    .add_(p[0].to(torch::kFloat));
                coverage.index({Slice(z0, z0 + cfg.patch_size.nz), Slice(y0, y0 + cfg.patch_size.ny),
                                Slice(x0, x0 + cfg.patch_size.nx)})
                    .add_(1.0);
            }
    acc = acc / coverage.unsqueeze(0);
    const auto& o = v.shape();
    SlidingWindowResult r;
    r.probs = acc.index({Slice(), Slice(offset[2], offset[2] + o.nz), Slice(offset[1], offset[1] + o.ny),
                         Slice(offset[0], offset[0] + o.nx)})
                  .contiguous();
    r.coverage = coverage
                     .index({Slice(offset[2], offset[2] + o.nz), Slice(offset[1], offset[1] + o.ny),
                             Slice(offset[0], offset[0] + o.nx)})
                     .contiguous();
    return r;
}

SlidingWindowResult sliding_window_probs(net::UNet3d& model, const Volume& v, const SlidingWindowConfig& cfg)
{
    torch::NoGradGuard no_grad;
    const bool was_training = model->is_training();
    model->eval();
    auto result = sliding_window_probs([&](const torch::Tensor& x) { return model->predict_probs(x); }, v, cfg);
    model->train(was_training);
    return result;
}

LabelMap sliding_window_predict(net::UNet3d& model, const Volume& v, const SlidingWindowConfig& cfg)
{
    const auto r = sliding_window_probs(model, v, cfg);
    return labels_from_tensor(r.probs.argmax(0), model->config().num_classes);
}

EvaluationOutput evaluate(net::UNet3d& model, const std::vector<LabeledCase>& cases, const SlidingWindowConfig& cfg,
                          bool spacing_aware, bool keep_predictions)
{
    EvaluationOutput out;
    const int C = model->config().num_classes;
    std::vector<metrics::CaseMetrics> rows;
    for (const auto& c : cases) {
        auto pred = sliding_window_predict(model, c.image, cfg);
        const std::array<double, 3> spacing = spacing_aware ? c.image.spacing : std::array<double, 3>{1.0, 1.0, 1.0};
        rows.push_back(metrics::evaluate_case(c.image.id, pred, c.label, C, spacing));
        if (keep_predictions)
            out.predictions.push_back(std::move(pred));
    }
    out.table = metrics::summarize(std::move(rows), C);
    return out;
}

} // namespace rcps::infer
