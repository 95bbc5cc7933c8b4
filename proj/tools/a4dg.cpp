// SPDX-License-Identifier: Apache-2.0
// Command-line front end: synth, train, render, eval, ablate-growing.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "a4dg/checkpoint.hpp"
#include "a4dg/dataset.hpp"
#include "a4dg/evaluate.hpp"
#include "a4dg/synthetic.hpp"
#include "a4dg/trainer.hpp"

namespace fs = std::filesystem;
using namespace a4dg;

namespace {

struct TrainFlags {
    std::string config;
    std::string growing, motion, opacity;
    std::optional<double> gamma, beta;
    std::optional<int> k, iters;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON train config");
        cmd->add_option("--growing", growing, "dynamic_aware | naive | off");
        cmd->add_option("--motion", motion, "linear | polynomial");
        cmd->add_option("--opacity", opacity, "generalized | gaussian4dgs");
        cmd->add_option("--gamma", gamma, "temporal-coverage exponent of the growing weight");
        cmd->add_option("--beta", beta, "temporal opacity shape");
        cmd->add_option("--k", k, "Gaussians per anchor");
        cmd->add_option("--iters", iters, "training iterations");
        cmd->add_option("--seed", seed, "random seed");
    }

    TrainConfig resolve() const {
        TrainConfig c;
        if (!config.empty()) c = train_config_from_json(read_file_bytes(config));
        if (!growing.empty()) c.growing = parse_growing(growing);
        if (!motion.empty()) c.motion = parse_motion(motion);
        if (!opacity.empty()) c.opacity = parse_opacity(opacity);
        if (gamma) c.gamma = *gamma;
        if (beta) c.beta = *beta;
        if (k) c.k = *k;
        if (iters) c.iterations = *iters;
        if (seed) c.seed = *seed;
        for (const std::string& w : c.validate()) std::cerr << "warning: " << w << "\n";
        return c;
    }
};

struct TrainOutcome {
    Scene scene;
    FinalizeReport finalize;
    double seconds = 0.0;
};

TrainOutcome train_to(const SceneDataset& data, const TrainConfig& cfg, const std::string& ckpt,
                      const std::string& metrics_path, const std::string& ledger_csv = {}) {
    const auto start = std::chrono::steady_clock::now();
    Trainer trainer(data, cfg);
    std::ofstream metrics(metrics_path);
    if (!metrics) throw Error("cannot write " + metrics_path, ExitCode::kData);
    write_metrics_header(metrics);
    if (!ledger_csv.empty()) {
        // Keep the statistics of the last growing event.
        trainer.before_grow = [&](const GradientLedger& l, int) {
            std::ofstream f(ledger_csv);
            l.write_csv(f);
        };
    }
    trainer.run([&](const IterationMetrics& m) {
        write_metrics_row(metrics, m);
        if (m.iteration % 500 == 0 || m.iteration == cfg.iterations)
            std::cerr << "iter " << m.iteration << "  L=" << m.loss << "  anchors=" << m.anchors
                      << "  rendered=" << m.gaussians_rendered << "\n";
        if (cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0 && !ckpt.empty())
            save_checkpoint(trainer.scene(), ckpt + ".iter" + std::to_string(m.iteration));
    });
    TrainOutcome out;
    out.scene = std::move(trainer.scene());
    out.finalize = finalize_scene(out.scene, ckpt);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
    const SynthSpec spec =
        spec_path.empty() ? SynthSpec::desk_default() : synth_spec_from_json(read_file_bytes(spec_path));
    const SynthScene s = generate_scene(spec);
    save_dataset(s.dataset, out);
    std::ofstream(fs::path(out) / "spec.json") << synth_spec_to_json(spec);
    std::cerr << "wrote " << s.dataset.cameras.size() << " cameras x " << s.dataset.frame_count << " frames, "
              << s.dataset.points.size() << " points to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const TrainFlags& flags, const std::string& out, std::string metrics) {
    const TrainConfig cfg = flags.resolve();
    const SceneDataset data = load_dataset(data_dir);
    if (metrics.empty()) metrics = out + ".metrics.csv";
    const TrainOutcome r = train_to(data, cfg, out, metrics);
    std::cerr << "pruned " << r.finalize.pruned << " anchors; " << r.finalize.anchors << " remain; "
              << r.seconds << " s\n";
    return 0;
}

int cmd_render(const std::string& ckpt, const std::string& data_dir, int camera, int frame, const std::string& out) {
    const Scene scene = load_checkpoint(ckpt);
    const SceneDataset data = load_dataset(data_dir, false);
    if (frame < 0 || frame >= data.frame_count)
        throw Error("frame " + std::to_string(frame) + " outside [0, " + std::to_string(data.frame_count) + ")",
                    ExitCode::kData);
    const Camera& cam = data.cameras[data.camera_index(camera)].camera;
    const InferenceCache cache = InferenceCache::build(scene.anchors, scene.mlps);
    write_png(out, render(scene, cam, data.frame_time(frame), RenderConfig{}, &cache).image());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& report) {
    const Scene scene = load_checkpoint(ckpt);
    const SceneDataset data = load_dataset(data_dir);
    const EvalReport r = evaluate_scene(scene, data);
    std::ofstream f(report);
    if (!f) throw Error("cannot write " + report, ExitCode::kData);
    write_eval_header(f);
    write_eval_row(f, fs::path(ckpt).filename().string(), r);
    write_eval_header(std::cout);
    write_eval_row(std::cout, fs::path(ckpt).filename().string(), r);
    return 0;
}

int cmd_ablate(const std::string& data_dir, const TrainFlags& flags, const std::string& out) {
    TrainConfig base = flags.resolve();
    const SceneDataset data = load_dataset(data_dir);
    fs::create_directories(out);
    std::ofstream summary(fs::path(out) / "summary.csv");
    write_eval_header(summary);
    write_eval_header(std::cout);
    for (GrowingMode g : {GrowingMode::kDynamicAware, GrowingMode::kNaive}) {
        TrainConfig cfg = base;
        cfg.growing = g;
        const std::string name = to_string(g);
        const fs::path dir = fs::path(out);
        const TrainOutcome r = train_to(data, cfg, (dir / (name + ".ckpt")).string(),
                                        (dir / (name + ".metrics.csv")).string(),
                                        (dir / (name + ".grad.csv")).string());
        const EvalReport e = evaluate_scene(r.scene, data);
        write_eval_row(summary, name, e);
        write_eval_row(std::cout, name, e);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anchor-based 4D Gaussian splatting on the CPU"};
    app.require_subcommand(1);

    std::string spec, out, data, ckpt, report, metrics;
    int camera = 0, frame = 0;
    TrainFlags train_flags, ablate_flags;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec, "JSON synth spec (default: built-in desk scene)");
    synth->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a scene");
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--out", out, "output checkpoint")->required();
    train->add_option("--metrics", metrics, "metrics CSV (default <out>.metrics.csv)");
    train_flags.attach(train);

    auto* rend = app.add_subcommand("render", "render one view of a checkpoint");
    rend->add_option("--ckpt", ckpt, "checkpoint")->required();
    rend->add_option("--data", data, "dataset directory holding the cameras")->required();
    rend->add_option("--camera", camera, "camera id")->required();
    rend->add_option("--frame", frame, "frame index")->required();
    rend->add_option("--out", out, "output PNG")->required();

    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test camera");
    eval->add_option("--ckpt", ckpt, "checkpoint")->required();
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--report", report, "output CSV")->required();

    auto* ablate = app.add_subcommand("ablate-growing", "dynamic-aware vs naive growing");
    ablate->add_option("--data", data, "dataset directory")->required();
    ablate->add_option("--out", out, "output directory")->required();
    ablate_flags.attach(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
    }

    try {
        if (*synth) return cmd_synth(spec, out);
        if (*train) return cmd_train(data, train_flags, out, metrics);
        if (*rend) return cmd_render(ckpt, data, camera, frame, out);
        if (*eval) return cmd_eval(ckpt, data, report);
        if (*ablate) return cmd_ablate(data, ablate_flags, out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::kData);
    }
    return 0;
}
