#pragma once

#include <random>
#include <vector>

#include <torch/torch.h>

#include "oracles/oracles.hpp"
#include "rcps/volume_io.hpp"

namespace testing_support {

/// (B, C, spatial...) tensor to an oracle field.
inline oracle::Field to_field(const torch::Tensor& t)
{
    const auto d = t.detach().to(torch::kDouble).contiguous();
    const int B = static_cast<int>(d.size(0));
    const int C = static_cast<int>(d.size(1));
    const int V = static_cast<int>(d.numel() / (B * C));
    oracle::Field f(B, C, V);
    std::copy(d.data_ptr<double>(), d.data_ptr<double>() + d.numel(), f.v.begin());
    return f;
}

inline std::vector<int> to_ints(const torch::Tensor& t)
{
    const auto d = t.to(torch::kLong).contiguous();
    return {d.data_ptr<std::int64_t>(), d.data_ptr<std::int64_t>() + d.numel()};
}

/// (E, z, y, x) embeddings to per-location vectors.
inline std::vector<oracle::Vec> locations(const torch::Tensor& u)
{
    const auto d = u.detach().to(torch::kDouble).reshape({u.size(0), -1}).t().contiguous();
    std::vector<oracle::Vec> out(static_cast<std::size_t>(d.size(0)));
    for (std::int64_t l = 0; l < d.size(0); ++l)
        out[static_cast<std::size_t>(l)].assign(d[l].data_ptr<double>(), d[l].data_ptr<double>() + d.size(1));
    return out;
}

inline std::vector<std::int64_t> to_int64(const torch::Tensor& t)
{
    const auto d = t.to(torch::kLong).reshape({-1}).contiguous();
    return {d.data_ptr<std::int64_t>(), d.data_ptr<std::int64_t>() + d.numel()};
}

inline std::vector<double> to_doubles(const torch::Tensor& t)
{
    const auto d = t.detach().to(torch::kDouble).reshape({-1}).contiguous();
    return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

/// Random small shape: cube side in [lo, hi] per axis.
inline std::vector<std::int64_t> random_spatial(std::mt19937_64& rng, int lo, int hi)
{
    std::uniform_int_distribution<int> side(lo, hi);
    return {side(rng), side(rng), side(rng)};
}

inline torch::Tensor random_logits(std::mt19937_64& rng, std::int64_t B, std::int64_t C,
                                   const std::vector<std::int64_t>& spatial, double scale = 2.0)
{
    std::vector<std::int64_t> shape{B, C};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(rng());
    return torch::randn(shape, gen, torch::dtype(torch::kDouble)) * scale;
}

inline torch::Tensor random_labels(std::mt19937_64& rng, std::int64_t B, std::int64_t C,
                                   const std::vector<std::int64_t>& spatial)
{
    std::vector<std::int64_t> shape{B};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(rng());
    return torch::randint(0, C, shape, gen, torch::kLong);
}

inline rcps::LabelMap label_map(const oracle::Mask& m, int num_classes = 2)
{
    rcps::LabelMap y;
    y.num_classes = num_classes;
    y.data = rcps::Grid<std::int32_t>(rcps::Shape3{m.nx, m.ny, m.nz}, 0);
    for (std::size_t i = 0; i < m.m.size(); ++i)
        y.data.values[i] = m.m[i];
    return y;
}

/// Bernoulli mask with foreground density p.
inline oracle::Mask random_mask(std::mt19937_64& rng, int nx, int ny, int nz, double p)
{
    oracle::Mask m(nx, ny, nz);
    std::bernoulli_distribution on(p);
    for (auto& v : m.m)
        v = on(rng);
    return m;
}

/// Relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12)
{
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Central finite differences of a scalar function of x (double tensor).
template <typename F>
std::vector<double> finite_difference(F&& f, const torch::Tensor& x, double h = 1e-6)
{
    torch::NoGradGuard guard;
    auto probe = x.detach().clone().contiguous();
    auto* data = probe.data_ptr<double>();
    std::vector<double> g(static_cast<std::size_t>(probe.numel()));
    for (std::int64_t i = 0; i < probe.numel(); ++i) {
        const double keep = data[i];
        data[i] = keep + h;
        const double up = f(probe).template item<double>();
        data[i] = keep - h;
        const double down = f(probe).template item<double>();
        data[i] = keep;
        g[static_cast<std::size_t>(i)] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Autograd gradient of a scalar function of x.
template <typename F>
std::vector<double> analytic_gradient(F&& f, const torch::Tensor& x)
{
    auto leaf = x.detach().clone().requires_grad_(true);
    auto y = f(leaf);
    y.backward();
    return to_doubles(leaf.grad());
}

} // namespace testing_support
