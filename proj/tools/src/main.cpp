#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rcps/inference.hpp"
#include "rcps/trainer.hpp"
#include "rcps_tools/cli.hpp"
#include "rcps_tools/plot.hpp"

namespace fs = std::filesystem;
using namespace rcps;

namespace {

struct MakePhantomsArgs {
    int labeled = 4;
    int unlabeled = 36;
    int test = 0;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> size;
    std::optional<fs::path> config;
    fs::path out;
    bool force = false;
};

int make_phantoms(const MakePhantomsArgs& a)
{
    if (a.labeled < 0 || a.unlabeled < 0 || a.test < 0)
        throw ArgumentError("phantom counts must be non-negative");
    if (a.labeled + a.unlabeled + a.test == 0)
        throw ArgumentError("nothing to generate: --labeled, --unlabeled and --test are all 0");
    RunConfig cfg;
    if (a.config)
        cfg = load_config_file(a.config->string(), cfg);
    if (a.seed)
        cfg.phantom.seed = *a.seed;
    if (a.size)
        cfg.phantom.volume_shape = {*a.size, *a.size, *a.size};
    cfg.phantom.validate();
    cli::prepare_output_dir(a.out, a.force);
    const auto ds = generate_phantoms(cfg.phantom, a.labeled, a.unlabeled, a.test);
    save_dataset(a.out, ds);
    std::printf("wrote %d labeled, %d unlabeled, %d test phantoms to %s\n", a.labeled, a.unlabeled, a.test,
                a.out.string().c_str());
    return 0;
}

struct TrainArgs {
    fs::path data;
    std::optional<fs::path> config;
    std::optional<fs::path> out;
    std::optional<std::string> run_name;
    std::optional<fs::path> resume;
    std::optional<double> labeled_ratio;
    std::optional<std::int64_t> stop_at_step;
    cli::TrainOverrides overrides;
};

int train_cmd(const TrainArgs& a)
{
    RunConfig base;
    fs::path run_dir;
    if (a.resume) {
        const auto info = net::read_checkpoint_info(*a.resume);
        if (info.run_config.is_null())
            throw CompatibilityError("checkpoint " + a.resume->string() + " carries no run configuration");
        base = merge_config(RunConfig{}, info.run_config);
        run_dir = a.resume->parent_path().parent_path();
    }
    const RunConfig cfg = cli::resolve_config(base, a.config, a.overrides);
    Dataset ds = load_dataset(a.data);
    if (a.labeled_ratio)
        ds = cli::apply_labeled_ratio(std::move(ds), *a.labeled_ratio);
    if (!a.resume) {
        run_dir = cli::output_root(a.out) / a.run_name.value_or(cli::timestamp());
        cli::prepare_output_dir(run_dir, false);
    }

    train::FitOptions opts;
    opts.run_dir = run_dir;
    opts.resume_from = a.resume;
    opts.stop_at_step = a.stop_at_step;
    opts.on_step = [](const train::LogRow& r) {
        if (r.step % 10 == 0)
            std::printf("step %lld epoch %lld lr %.5f seg %.4f rp %.4f bc %.4f\n", static_cast<long long>(r.step),
                        static_cast<long long>(r.epoch), r.lr, r.report.seg, r.report.rectified_pseudo,
                        r.report.contrastive);
    };
    const auto result = train::fit(ds, cfg, opts);
    std::printf("run directory: %s\nsteps: %lld / %lld\n", run_dir.string().c_str(),
                static_cast<long long>(result.steps_done), static_cast<long long>(result.max_steps));
    if (!result.checkpoints.empty())
        std::printf("checkpoint: %s\n", result.checkpoints.back().string().c_str());
    return 0;
}

struct EvalArgs {
    fs::path checkpoint;
    fs::path data;
    std::string split = "test";
    std::optional<fs::path> out;
    std::optional<fs::path> config;
    bool save_preds = false;
    bool spacing_aware = false;
};

int eval_cmd(const EvalArgs& a)
{
    net::CheckpointInfo info;
    RunConfig cfg;
    {
        info = net::read_checkpoint_info(a.checkpoint);
        if (!info.run_config.is_null())
            cfg = merge_config(cfg, info.run_config);
    }
    if (a.config) {
        cfg = load_config_file(a.config->string(), cfg);
        if (!(cfg.network == info.network))
            throw CompatibilityError("network section of " + a.config->string() + " does not match checkpoint " +
                                     a.checkpoint.string());
    }
    if (a.spacing_aware)
        cfg.eval.spacing_aware = true;
    auto model = net::load_checkpoint(a.checkpoint, nullptr, &cfg.network);
    const Dataset ds = load_dataset(a.data);
    const std::vector<LabeledCase>* cases = nullptr;
    if (a.split == "test")
        cases = &ds.test;
    else if (a.split == "labeled")
        cases = &ds.labeled;
    else
        throw ArgumentError("--split must be 'test' or 'labeled'");
    if (cases->empty())
        throw ConfigError("split '" + a.split + "' of " + a.data.string() + " is empty");

    const fs::path out = a.out.value_or(a.checkpoint.parent_path().parent_path() / ("eval_" + a.split));
    fs::create_directories(out);
    const auto result = infer::evaluate(model, *cases, cfg.inference, cfg.eval.spacing_aware, a.save_preds);
    metrics::write_csv(out / "metrics.csv", result.table);
    if (a.save_preds) {
        fs::create_directories(out / "predictions");
        for (std::size_t i = 0; i < cases->size(); ++i)
            save_nifti(out / "predictions" / ((*cases)[i].image.id + "_pred.nii.gz"), result.predictions[i],
                       (*cases)[i].image);
    }
    for (const auto& s : result.table.per_class)
        std::printf("class %d  DSC %.4f +- %.4f  HD95 %.3f  ASD %.3f\n", s.cls, s.dsc.mean, s.dsc.stddev, s.hd95.mean,
                    s.asd.mean);
    const auto& o = result.table.overall;
    std::printf("overall  DSC %.4f +- %.4f  HD95 %.3f  ASD %.3f\nmetrics: %s\n", o.dsc.mean, o.dsc.stddev, o.hd95.mean,
                o.asd.mean, (out / "metrics.csv").string().c_str());
    return 0;
}

struct InferArgs {
    fs::path checkpoint;
    fs::path input;
    fs::path output;
    std::optional<double> overlap;
};

int infer_cmd(const InferArgs& a)
{
    net::CheckpointInfo info;
    auto model = net::load_checkpoint(a.checkpoint, &info);
    RunConfig cfg;
    if (!info.run_config.is_null())
        cfg = merge_config(cfg, info.run_config);
    if (a.overlap)
        cfg.inference.overlap = *a.overlap;
    const auto image = load_nifti(a.input).volume;
    const auto pred = infer::sliding_window_predict(model, image, cfg.inference);
    if (a.output.has_parent_path())
        fs::create_directories(a.output.parent_path());
    save_nifti(a.output, pred, image);
    std::printf("prediction: %s\n", a.output.string().c_str());
    return 0;
}

struct PlotArgs {
    std::optional<fs::path> log;
    std::optional<fs::path> image;
    std::optional<fs::path> gt;
    std::optional<fs::path> pred;
    fs::path out = ".";
    int scale = 4;
};

int plot_cmd(const PlotArgs& a)
{
    if (!a.log && !a.image)
        throw ArgumentError("plot needs --log or --image");
    fs::create_directories(a.out);
    if (a.log) {
        plot::write_log_plots(train::read_log(*a.log), a.out);
        std::printf("wrote loss_curves.svg, weight_schedule.svg, lr_schedule.svg to %s\n", a.out.string().c_str());
    }
    if (a.image) {
        const auto image = load_nifti(*a.image).volume;
        std::optional<LabelMap> gt, pred;
        if (a.gt)
            gt = load_label(*a.gt);
        if (a.pred)
            pred = load_label(*a.pred);
        plot::write_png(a.out / "overlay.png",
                        plot::overlay_mid_slice(image, gt ? &*gt : nullptr, pred ? &*pred : nullptr, a.scale));
        std::printf("wrote %s\n", (a.out / "overlay.png").string().c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Semi-supervised 3D segmentation with rectified pseudo supervision and voxel contrast"};
    app.require_subcommand(1);

    MakePhantomsArgs mp;
    auto* c_mp = app.add_subcommand("make-phantoms", "Synthesize a labeled/unlabeled/test phantom dataset");
    c_mp->add_option("--labeled", mp.labeled, "Labeled phantoms")->capture_default_str();
    c_mp->add_option("--unlabeled", mp.unlabeled, "Unlabeled phantoms")->capture_default_str();
    c_mp->add_option("--test", mp.test, "Held-out labeled test phantoms")->capture_default_str();
    c_mp->add_option("--seed", mp.seed, "Phantom seed");
    c_mp->add_option("--size", mp.size, "Cubic volume edge length");
    c_mp->add_option("--config", mp.config, "Configuration file (phantom section)");
    c_mp->add_option("--out", mp.out, "Output directory")->required();
    c_mp->add_flag("--force", mp.force, "Overwrite a non-empty output directory");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Train a model on a dataset");
    c_tr->add_option("--data", tr.data, "Dataset directory")->required();
    c_tr->add_option("--config", tr.config, "Configuration file");
    c_tr->add_option("--out", tr.out, "Output root (default $RCPS_OUTPUT_ROOT or ./runs)");
    c_tr->add_option("--run-name", tr.run_name, "Run directory name (default: UTC timestamp)");
    c_tr->add_option("--resume", tr.resume, "Checkpoint directory to continue from");
    c_tr->add_option("--labeled-ratio", tr.labeled_ratio, "Fraction of training cases kept labeled");
    c_tr->add_option("--stop-at-step", tr.stop_at_step, "Stop after this many total steps");
    c_tr->add_option("--alpha", tr.overrides.alpha, "Maximum rectified pseudo supervision weight");
    c_tr->add_option("--beta", tr.overrides.beta, "Maximum contrastive weight");
    c_tr->add_option("--temp-T", tr.overrides.temp_T, "Sharpening temperature");
    c_tr->add_option("--temp-tau", tr.overrides.temp_tau, "Contrastive temperature");
    c_tr->add_option("--negatives", tr.overrides.negatives, "Negatives per anchor");
    c_tr->add_option("--epochs", tr.overrides.epochs, "Training epochs");
    c_tr->add_option("--seed", tr.overrides.seed, "Training seed");
    c_tr->add_flag("--supervised-only", tr.overrides.supervised_only, "Labeled data only, alpha = beta = 0");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
    c_ev->add_option("--data", ev.data, "Dataset directory")->required();
    c_ev->add_option("--split", ev.split, "test or labeled")->capture_default_str();
    c_ev->add_option("--out", ev.out, "Output directory");
    c_ev->add_option("--config", ev.config, "Configuration file overriding inference/eval settings");
    c_ev->add_flag("--save-preds", ev.save_preds, "Write predicted label volumes");
    c_ev->add_flag("--spacing-aware", ev.spacing_aware, "Report distances in physical units");

    InferArgs in;
    auto* c_in = app.add_subcommand("infer", "Segment a single NIfTI volume");
    c_in->add_option("--checkpoint", in.checkpoint, "Checkpoint directory")->required();
    c_in->add_option("--input", in.input, "Input volume")->required();
    c_in->add_option("--output", in.output, "Output label volume")->required();
    c_in->add_option("--overlap", in.overlap, "Sliding window overlap");

    PlotArgs pl;
    auto* c_pl = app.add_subcommand("plot", "Render learning curves or a segmentation overlay");
    c_pl->add_option("--log", pl.log, "Training log CSV");
    c_pl->add_option("--image", pl.image, "Image volume for the overlay");
    c_pl->add_option("--gt", pl.gt, "Ground-truth label volume");
    c_pl->add_option("--pred", pl.pred, "Predicted label volume");
    c_pl->add_option("--out", pl.out, "Output directory")->capture_default_str();
    c_pl->add_option("--scale", pl.scale, "Pixels per voxel")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (c_mp->parsed())
            return make_phantoms(mp);
        if (c_tr->parsed())
            return train_cmd(tr);
        if (c_ev->parsed())
            return eval_cmd(ev);
        if (c_in->parsed())
            return infer_cmd(in);
        if (c_pl->parsed())
            return plot_cmd(pl);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cli::exit_code_for(e);
    }
    return 1;
}
