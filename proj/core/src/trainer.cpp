#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rcps/augment.hpp"
#include "rcps/inference.hpp"
#include "rcps/trainer.hpp"

namespace rcps::train {

namespace {

// Stream tags keep every per-step random source independent.
enum : std::uint64_t {
    kUnlabeledOrder = 1ull << 40,
    kLabeledOrder = 2ull << 40,
    kPatch = 3ull << 40,
    kViews = 4ull << 40,
};

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(p[i - 1], p[pick(rng)]);
    }
    return p;
}

torch::Tensor stack_images(const std::vector<Volume>& a, const std::vector<Volume>& b = {})
{
    std::vector<torch::Tensor> parts;
    for (const auto& v : a)
        parts.push_back(infer::to_tensor(v));
    for (const auto& v : b)
        parts.push_back(infer::to_tensor(v));
    return torch::cat(parts, 0);
}

} // namespace

double poly_lr(std::int64_t step, std::int64_t max_steps, double lr0, double power)
{
    if (max_steps < 1)
        throw ArgumentError("poly_lr: max_steps must be >= 1");
    if (step < 0 || step > max_steps)
        throw ArgumentError("poly_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(max_steps) + "]");
    return lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(max_steps), power);
}

double gaussian_warmup(double epoch, int warmup_epochs, double lambda_max)
{
    if (warmup_epochs < 1)
        throw ArgumentError("gaussian_warmup: warmup_epochs must be >= 1");
    const double t = std::clamp(epoch / static_cast<double>(warmup_epochs), 0.0, 1.0);
    return lambda_max * std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

std::int64_t steps_per_epoch(const TrainConfig& cfg, std::size_t num_labeled, std::size_t num_unlabeled)
{
    const auto ceil_div = [](std::size_t a, std::size_t b) { return static_cast<std::int64_t>((a + b - 1) / b); };
    if (num_unlabeled > 0)
        return ceil_div(num_unlabeled, static_cast<std::size_t>(cfg.batch_unlabeled));
    if (num_labeled == 0)
        throw ConfigError("dataset has no training images");
    return ceil_div(num_labeled, static_cast<std::size_t>(cfg.batch_labeled));
}

ScheduleState schedule_at(const TrainConfig& cfg, std::int64_t step, std::int64_t spe)
{
    ScheduleState s;
    s.step = step;
    s.max_steps = static_cast<std::int64_t>(cfg.epochs) * spe;
    s.epoch = step / spe;
    s.lr = poly_lr(step, s.max_steps, cfg.lr0, cfg.poly_power);
    if (!cfg.supervised_only) {
        const int warm = cfg.warmup_epochs();
        s.alpha = gaussian_warmup(static_cast<double>(s.epoch), warm, cfg.alpha_max);
        s.beta = gaussian_warmup(static_cast<double>(s.epoch), warm, cfg.beta_max);
    }
    return s;
}

Batch assemble_batch(const Dataset& ds, const TrainConfig& cfg, std::int64_t step, std::int64_t spe)
{
    if (ds.labeled.empty())
        throw ConfigError("training requires at least one labeled case");
    Batch b;
    Rng patch_rng(mix_seed(cfg.seed, kPatch | static_cast<std::uint64_t>(step)));

    const std::size_t nl = ds.labeled.size();
    for (int i = 0; i < cfg.batch_labeled; ++i) {
        const auto k = static_cast<std::size_t>(step) * static_cast<std::size_t>(cfg.batch_labeled) + static_cast<std::size_t>(i);
        const auto order = permutation(nl, mix_seed(cfg.seed, kLabeledOrder | (k / nl)));
        const auto& c = ds.labeled[order[k % nl]];
        auto patch = extract_patch(c.image, &c.label, cfg.patch_size, patch_rng);
        auto [img, lab] = augment::grid_distort(patch.image, &*patch.label, cfg.distortion, patch_rng);
        b.labeled.push_back(std::move(img));
        b.labels.push_back(std::move(*lab));
    }
    if (cfg.supervised_only || ds.unlabeled.empty())
        return b;

    const std::size_t nu = ds.unlabeled.size();
    const auto epoch = static_cast<std::uint64_t>(step / spe);
    const auto order = permutation(nu, mix_seed(cfg.seed, kUnlabeledOrder | epoch));
    const auto within = static_cast<std::size_t>(step % spe);
    for (int i = 0; i < cfg.batch_unlabeled; ++i) {
        const auto k = (within * static_cast<std::size_t>(cfg.batch_unlabeled) + static_cast<std::size_t>(i)) % nu;
        auto patch = extract_patch(ds.unlabeled[order[k]], nullptr, cfg.patch_size, patch_rng);
        auto distorted = augment::grid_distort(patch.image, nullptr, cfg.distortion, patch_rng);
        b.unlabeled.push_back(std::move(distorted.first));
    }
    return b;
}

std::unique_ptr<torch::optim::SGD> make_optimizer(net::UNet3d& model, const TrainConfig& cfg)
{
    std::vector<torch::Tensor> decayed, plain;
    for (const auto& p : model->parameters())
        (p.dim() > 1 ? decayed : plain).push_back(p);
    std::vector<torch::optim::OptimizerParamGroup> groups;
    groups.emplace_back(decayed, std::make_unique<torch::optim::SGDOptions>(
                                     torch::optim::SGDOptions(cfg.lr0).momentum(cfg.momentum).weight_decay(cfg.weight_decay)));
    groups.emplace_back(plain, std::make_unique<torch::optim::SGDOptions>(
                                   torch::optim::SGDOptions(cfg.lr0).momentum(cfg.momentum).weight_decay(0.0)));
    return std::make_unique<torch::optim::SGD>(std::move(groups), torch::optim::SGDOptions(cfg.lr0));
}

loss::LossReport train_step(const Batch& batch, net::UNet3d& model, torch::optim::SGD& optimizer,
                            const ScheduleState& schedule, const TrainConfig& cfg, Rng& rng, StepProbe* probe)
{
    const auto Bl = static_cast<std::int64_t>(batch.labeled.size());
    const auto Bu = static_cast<std::int64_t>(batch.unlabeled.size());
    if (Bl == 0)
        throw ArgumentError("train_step: labeled batch is empty");
    if (static_cast<std::int64_t>(batch.labels.size()) != Bl)
        throw ArgumentError("train_step: every labeled patch needs a label");
    if (Bu == 0 && !cfg.supervised_only)
        throw ArgumentError("train_step: unlabeled batch is empty (use supervised_only for the baseline)");
    const std::int64_t B = Bl + Bu;

    const bool use_rp = !cfg.supervised_only && cfg.alpha_max > 0.0;
    const bool use_bc = !cfg.supervised_only && cfg.beta_max > 0.0;
    const bool need_views = use_rp || use_bc;

    model->train();
    for (auto& g : optimizer.param_groups())
        static_cast<torch::optim::SGDOptions&>(g.options()).lr(schedule.lr);

    const auto x = stack_images(batch.labeled, batch.unlabeled);
    std::vector<torch::Tensor> label_parts;
    for (const auto& y : batch.labels)
        label_parts.push_back(infer::to_tensor(y).unsqueeze(0));
    const auto labels = torch::cat(label_parts, 0);

    torch::Tensor logits, probs, emb, p1, p2, e1, e2;
    if (need_views) {
        std::vector<Volume> v1, v2;
        for (std::int64_t i = 0; i < B; ++i) {
            const Volume& src = i < Bl ? batch.labeled[static_cast<std::size_t>(i)] : batch.unlabeled[static_cast<std::size_t>(i - Bl)];
            auto [a, b] = augment::make_views(src, cfg.intensity, rng);
            v1.push_back(std::move(a));
            v2.push_back(std::move(b));
        }
        const auto all = torch::cat({x, stack_images(v1), stack_images(v2)}, 0);
        auto out = model->forward(all, use_bc);
        auto lg = out.logits.split(B, 0);
        auto pr = out.probs.split(B, 0);
        logits = lg[0];
        probs = pr[0];
        p1 = pr[1];
        p2 = pr[2];
        if (use_bc) {
            auto em = out.embeddings.split(B, 0);
            emb = em[0];
            e1 = em[1];
            e2 = em[2];
        }
    } else {
        auto out = model->forward(x, false);
        logits = out.logits;
        probs = out.probs;
    }

    const auto seg = loss::seg_loss(probs.slice(0, 0, Bl), labels, cfg.loss).total;

    torch::Tensor rp_l, rp_u, bc_l, bc_u;
    double kl_mean = 0.0;
    if (use_rp) {
        auto rl = loss::rectified_pseudo_loss(p1.slice(0, 0, Bl), p2.slice(0, 0, Bl), logits.slice(0, 0, Bl), cfg.loss);
        rp_l = rl.total;
        kl_mean = rl.kl_mean.item<double>() * static_cast<double>(Bl);
        if (Bu > 0) {
            auto ru = loss::rectified_pseudo_loss(p1.slice(0, Bl), p2.slice(0, Bl), logits.slice(0, Bl), cfg.loss);
            rp_u = ru.total;
            kl_mean += ru.kl_mean.item<double>() * static_cast<double>(Bu);
        }
        kl_mean /= static_cast<double>(B);
    }
    if (use_bc) {
        const int stride = model->config().projection_stride();
        std::vector<sampling::PseudoLabelGrid> grids;
        for (std::int64_t i = 0; i < B; ++i)
            grids.push_back(sampling::downsample_pseudo_labels(probs[i], stride));
        sampling::ContrastiveOptions co;
        co.tau = cfg.loss.temperature_tau;
        co.num_negatives = cfg.contrastive.num_negatives;
        co.anchors_per_image = cfg.contrastive.anchors_per_image;
        co.detach_negatives = cfg.contrastive.detach_negatives;
        std::vector<torch::Tensor> per_image;
        for (std::int64_t i = 0; i < B; ++i) {
            // Negatives come from the next image of the mini-batch.
            const std::int64_t j = (i + 1) % B;
            per_image.push_back(sampling::bidirectional_contrastive_loss(
                e1[i], e2[i], emb[j], grids[static_cast<std::size_t>(i)], grids[static_cast<std::size_t>(j)], co, &rng));
        }
        bc_l = torch::stack(std::vector<torch::Tensor>(per_image.begin(), per_image.begin() + Bl)).mean();
        if (Bu > 0)
            bc_u = torch::stack(std::vector<torch::Tensor>(per_image.begin() + Bl, per_image.end())).mean();
    }

    const auto sup = loss::supervised_total(seg, rp_l, bc_l, schedule.alpha, schedule.beta);
    const auto unsup = loss::unsupervised_total(rp_u, bc_u, schedule.alpha, schedule.beta);
    const auto total = sup + unsup;

    std::vector<torch::Tensor> before;
    if (probe) {
        if (unsup.requires_grad()) {
            const auto params = model->parameters();
            const auto grads = torch::autograd::grad({unsup}, params, {}, true, false, true);
            double sq = 0.0;
            for (const auto& g : grads)
                if (g.defined())
                    sq += g.pow(2).sum().item<double>();
            probe->unsupervised_grad_norm = std::sqrt(sq);
        } else {
            probe->unsupervised_grad_norm = 0.0;
        }
        for (const auto& p : model->parameters())
            before.push_back(p.detach().clone());
    }

    optimizer.zero_grad();
    total.backward();
    optimizer.step();

    if (probe) {
        std::vector<torch::Tensor> deltas;
        const auto params = model->parameters();
        for (std::size_t i = 0; i < params.size(); ++i)
            deltas.push_back((params[i].detach() - before[i]).reshape({-1}));
        probe->update = torch::cat(deltas);
    }

    auto weighted = [&](const torch::Tensor& l, const torch::Tensor& u) {
        double v = 0.0;
        if (l.defined())
            v += l.item<double>() * static_cast<double>(Bl);
        if (u.defined())
            v += u.item<double>() * static_cast<double>(Bu);
        return v / static_cast<double>(B);
    };
    loss::LossReport r;
    r.seg = seg.item<double>();
    r.rectified_pseudo = weighted(rp_l, rp_u);
    r.contrastive = weighted(bc_l, bc_u);
    r.total_supervised = sup.item<double>();
    r.total_unsupervised = unsup.item<double>();
    r.uncertainty_mean = kl_mean;
    return r;
}

// ---- logging -------------------------------------------------------------

void write_log_header(std::ostream& out)
{
    out << "step,epoch,lr,alpha,beta,seg,rp,bc,sup_total,unsup_total,kl_mean\n";
}

void write_log_row(std::ostream& out, const LogRow& row)
{
    char buf[512];
    const auto& r = row.report;
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(row.step), static_cast<long long>(row.epoch), row.lr, row.alpha, row.beta, r.seg,
                  r.rectified_pseudo, r.contrastive, r.total_supervised, r.total_unsupervised, r.uncertainty_mean);
    out << buf;
}

std::vector<LogRow> read_log(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read training log " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("step,epoch,lr", 0) != 0)
        throw IoError("training log " + path.string() + " is empty or has no header");
    std::vector<LogRow> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ','))
            v.push_back(std::stod(cell));
        if (v.size() != 11)
            throw FormatError("malformed training log row: " + line);
        LogRow row;
        row.step = static_cast<std::int64_t>(v[0]);
        row.epoch = static_cast<std::int64_t>(v[1]);
        row.lr = v[2];
        row.alpha = v[3];
        row.beta = v[4];
        row.report = {v[5], v[6], v[7], v[8], v[9], v[10]};
        rows.push_back(row);
    }
    return rows;
}

// ---- fit -----------------------------------------------------------------

FitResult fit(const Dataset& ds, const RunConfig& cfg, const FitOptions& opts)
{
    cfg.validate();
    const auto& tc = cfg.train;
    if (ds.labeled.size() < static_cast<std::size_t>(tc.batch_labeled))
        throw ConfigError("dataset has " + std::to_string(ds.labeled.size()) + " labeled cases, batch needs " +
                          std::to_string(tc.batch_labeled));
    if (!tc.supervised_only && ds.unlabeled.size() < static_cast<std::size_t>(tc.batch_unlabeled))
        throw ConfigError("dataset has " + std::to_string(ds.unlabeled.size()) + " unlabeled cases, batch needs " +
                          std::to_string(tc.batch_unlabeled));
    for (const auto& c : ds.labeled)
        for (auto v : c.label.data.values)
            if (v >= cfg.network.num_classes)
                throw ConfigError("label value " + std::to_string(v) + " in case " + c.image.id +
                                  " exceeds network.num_classes - 1");

    const auto spe = steps_per_epoch(tc, ds.labeled.size(), ds.unlabeled.size());
    FitResult result;
    result.max_steps = static_cast<std::int64_t>(tc.epochs) * spe;

    torch::manual_seed(tc.seed);
    result.model = net::UNet3d(cfg.network);
    auto optimizer = make_optimizer(result.model, tc);
    std::int64_t step = 0;
    if (opts.resume_from) {
        net::CheckpointInfo info;
        info = net::read_checkpoint_info(*opts.resume_from);
        if (!(info.network == cfg.network))
            throw CompatibilityError("resume checkpoint network config differs from the run configuration");
        net::load_parameters(*opts.resume_from, result.model, optimizer.get());
        step = info.step;
        if (step > result.max_steps)
            throw ConfigError("checkpoint step " + std::to_string(step) + " exceeds the schedule horizon");
    }

    namespace fs = std::filesystem;
    std::ofstream log;
    const bool persist = !opts.run_dir.empty();
    if (persist) {
        std::error_code ec;
        fs::create_directories(opts.run_dir / "checkpoints", ec);
        if (ec)
            throw IoError("cannot create run directory " + opts.run_dir.string() + ": " + ec.message());
        const auto log_path = opts.run_dir / "train_log.csv";
        std::vector<LogRow> kept;
        if (step > 0 && fs::exists(log_path))
            for (const auto& row : read_log(log_path))
                if (row.step < step)
                    kept.push_back(row);
        log.open(log_path, std::ios::trunc);
        if (!log)
            throw IoError("cannot write training log " + log_path.string());
        write_log_header(log);
        for (const auto& row : kept)
            write_log_row(log, row);
        std::ofstream(opts.run_dir / "resolved_config.json") << nlohmann::json(cfg).dump(2) << '\n';
    }

    auto checkpoint = [&](std::int64_t done, const std::string& name) {
        if (!persist)
            return;
        net::CheckpointInfo info{cfg.network, done, done / spe, tc.seed, nlohmann::json(cfg)};
        const auto dir = opts.run_dir / "checkpoints" / name;
        net::save_checkpoint(dir, result.model, info, optimizer.get());
        result.checkpoints.push_back(dir);
    };

    const std::int64_t stop = std::min(result.max_steps, opts.stop_at_step.value_or(result.max_steps));
    for (; step < stop; ++step) {
        const auto sched = schedule_at(tc, step, spe);
        const auto batch = assemble_batch(ds, tc, step, spe);
        Rng rng(mix_seed(tc.seed, kViews | static_cast<std::uint64_t>(step)));
        LogRow row;
        row.report = train_step(batch, result.model, *optimizer, sched, tc, rng);
        row.step = step;
        row.epoch = sched.epoch;
        row.lr = sched.lr;
        row.alpha = sched.alpha;
        row.beta = sched.beta;
        for (double v : {row.report.seg, row.report.total_supervised, row.report.total_unsupervised})
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite loss at step " + std::to_string(step));
        if (log)
            write_log_row(log, row);
        result.log.push_back(row);
        if (opts.on_step)
            opts.on_step(row);
        const auto done = step + 1;
        if (done % spe == 0 && (done / spe) % tc.checkpoint_every == 0 && done < result.max_steps)
            checkpoint(done, "ckpt_" + std::to_string(done));
    }
    result.steps_done = step;
    if (log)
        log.flush();
    if (step == result.max_steps)
        checkpoint(step, "final");
    else
        checkpoint(step, "ckpt_" + std::to_string(step));
    return result;
}

} // namespace rcps::train
