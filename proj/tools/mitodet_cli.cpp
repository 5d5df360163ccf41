#include "mitodet/candidates.hpp"
#include "mitodet/core.hpp"
#include "mitodet/detect.hpp"
#include "mitodet/eval.hpp"
#include "mitodet/io.hpp"
#include "mitodet/net.hpp"
#include "mitodet/parallel.hpp"
#include "mitodet/pipeline.hpp"
#include "mitodet/synth.hpp"
#include "mitodet/targets.hpp"
#include "mitodet/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mitodet;

namespace {

constexpr const char* kVersion = "mitodet 1.0.0";

int parse_size(const std::string& s, int& w, int& h) {
    return std::sscanf(s.c_str(), "%dx%d", &w, &h) == 2 ? 0 : -1;
}

void add_extract_flags(CLI::App* cmd, ExtractConfig& cfg) {
    cmd->add_option("--d", cfg.d, "average filter size (odd)")->capture_default_str();
    cmd->add_option("--theta-bin", cfg.theta_bin, "binarization threshold")->capture_default_str();
    cmd->add_option("--min-area", cfg.min_area, "minimum component area, px")->capture_default_str();
    cmd->add_option("--tau-link", cfg.tau_link, "max centroid distance for linking, px")
        ->capture_default_str();
    cmd->add_flag("--no-normalize", [&cfg](std::int64_t) { cfg.normalize = false; },
                  "skip global contrast normalization");
    cmd->add_option("--crop-width", cfg.crop_width, "candidate width")->capture_default_str();
    cmd->add_option("--crop-height", cfg.crop_height, "candidate height")->capture_default_str();
    cmd->add_option("--crop-depth", cfg.crop_depth, "candidate frame count")->capture_default_str();
    cmd->add_option("--slide", cfg.slide, "window slide along the track, frames")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mitosis detection pipeline: synthesize, extract, train, detect, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kVersion);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = all hardware threads)")
        ->capture_default_str();

    // --- synth ---------------------------------------------------------------
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic sequence with ground truth");
    SynthConfig sy;
    std::string synth_out, synth_size = "256x256";
    int synth_bits = 16;
    c_synth->add_option("--out", synth_out, "output directory")->required();
    c_synth->add_option("--events", sy.n_events)->capture_default_str();
    c_synth->add_option("--close-pairs", sy.n_close_pairs)->capture_default_str();
    c_synth->add_option("--distractors", sy.n_distractors)->capture_default_str();
    c_synth->add_option("--seed", sy.seed)->capture_default_str();
    c_synth->add_option("--frames", sy.frames)->capture_default_str();
    c_synth->add_option("--size", synth_size, "frame size WxH")->capture_default_str();
    c_synth->add_option("--peak", sy.peak)->capture_default_str();
    c_synth->add_option("--radius", sy.radius)->capture_default_str();
    c_synth->add_option("--ramp", sy.ramp)->capture_default_str();
    c_synth->add_option("--bg-amplitude", sy.bg_amplitude)->capture_default_str();
    c_synth->add_option("--min-separation", sy.min_separation)->capture_default_str();
    c_synth->add_option("--bit-depth", synth_bits, "PNG bit depth (8 or 16)")->capture_default_str();
    c_synth->callback([&] {
        if (parse_size(synth_size, sy.width, sy.height))
            throw ConfigError("--size must look like 256x256");
        const SynthResult r = generate(sy);
        save_sequence(synth_out, r.seq, synth_bits);
        write_annotations((fs::path(synth_out) / "annotations.csv").string(), r.annotations);
        std::printf("wrote %d frames and %zu annotations to %s\n", r.seq.num_frames(),
                    r.annotations.size(), synth_out.c_str());
    });

    // --- extract -------------------------------------------------------------
    auto* c_extract = app.add_subcommand("extract", "extract candidate patch sequences");
    ExtractConfig ex;
    std::string ex_in, ex_out;
    c_extract->add_option("--in", ex_in, "sequence directory")->required();
    c_extract->add_option("--out", ex_out, "candidate output directory")->required();
    add_extract_flags(c_extract, ex);
    c_extract->callback([&] {
        const auto seq = load_sequence(ex_in);
        const auto cands = extract(seq, ex, resolve_threads(threads));
        save_candidates_dir(ex_out, cands);
        std::printf("extracted %zu candidates from %d frames\n", cands.size(), seq.num_frames());
    });

    // --- targets ---------------------------------------------------------------
    auto* c_targets = app.add_subcommand("targets", "build likelihood-map training targets");
    SigmaParams sg;
    std::string tg_cands, tg_anns, tg_out;
    double tg_base = 0.0;
    c_targets->add_option("--candidates", tg_cands, "candidate directory")->required();
    c_targets->add_option("--annotations", tg_anns, "annotation CSV")->required();
    c_targets->add_option("--out", tg_out, "target output directory")->required();
    c_targets->add_option("--sigma-x", sg.sigma_x)->capture_default_str();
    c_targets->add_option("--sigma-y", sg.sigma_y)->capture_default_str();
    c_targets->add_option("--sigma-t", sg.sigma_t)->capture_default_str();
    c_targets->add_option("--index-base", tg_base, "annotation index base (0 or 1)")
        ->capture_default_str();
    c_targets->callback([&] {
        const auto cands = load_candidates_dir(tg_cands);
        const auto anns = read_annotations(tg_anns, tg_base);
        std::vector<Volume3<float>> targets;
        for (const auto& c : cands) targets.push_back(build_targets(c, anns, sg));
        save_targets_dir(tg_out, targets);
        std::printf("wrote %zu target volumes\n", targets.size());
    });

    // --- train ----------------------------------------------------------------
    auto* c_train = app.add_subcommand("train", "train the network on candidate/target pairs");
    TrainConfig tc;
    std::string tr_cands, tr_targets, tr_out, tr_curve, tr_opt = "adam", tr_loss = "per-voxel-mean";
    int tr_levels = 2, tr_base = 8;
    c_train->add_option("--candidates", tr_cands)->required();
    c_train->add_option("--targets", tr_targets)->required();
    c_train->add_option("--out", tr_out, "checkpoint path")->required();
    c_train->add_option("--lr", tc.lr)->capture_default_str();
    c_train->add_option("--batch", tc.batch_size)->capture_default_str();
    c_train->add_option("--epochs", tc.epochs)->capture_default_str();
    c_train->add_option("--seed", tc.seed)->capture_default_str();
    c_train->add_option("--optimizer", tr_opt, "adam | sgd")->capture_default_str();
    c_train->add_option("--loss-mode", tr_loss, "per-voxel-mean | sum")->capture_default_str();
    c_train->add_option("--levels", tr_levels, "encoder-decoder levels")->capture_default_str();
    c_train->add_option("--base-channels", tr_base)->capture_default_str();
    c_train->add_option("--checkpoint-interval", tc.checkpoint_interval, "epochs, 0 = final only")
        ->capture_default_str();
    c_train->add_option("--loss-curve", tr_curve, "loss curve CSV (default: next to checkpoint)");
    c_train->callback([&] {
        if (tr_opt == "adam")
            tc.optimizer = Optimizer::Adam;
        else if (tr_opt == "sgd")
            tc.optimizer = Optimizer::Sgd;
        else
            throw ConfigError("--optimizer must be 'adam' or 'sgd'");
        if (tr_loss == "per-voxel-mean")
            tc.loss_mode = LossMode::PerVoxelMean;
        else if (tr_loss == "sum")
            tc.loss_mode = LossMode::Sum;
        else
            throw ConfigError("--loss-mode must be 'per-voxel-mean' or 'sum'");
        tc.threads = resolve_threads(threads);
        const auto cands = load_candidates_dir(tr_cands);
        const auto targets = load_targets_dir(tr_targets);
        const Architecture arch = vnet_lite(tr_levels, tr_base);
        CheckpointFn<float> cb = [&](int epoch, const FlatArray<float>& params, std::uint64_t stp) {
            char name[64];
            std::snprintf(name, sizeof(name), "model_epoch%04d.ckpt", epoch + 1);
            save_checkpoint((fs::path(tr_out).parent_path() / name).string(),
                            {arch, params, stp, tc.seed});
        };
        const auto res =
            train(arch, cands, targets, tc, tc.checkpoint_interval > 0 ? cb : CheckpointFn<float>{});
        save_checkpoint(tr_out, {arch, res.params, res.steps, tc.seed});
        const std::string curve =
            tr_curve.empty() ? (fs::path(tr_out).parent_path() / "loss_curve.csv").string()
                             : tr_curve;
        write_loss_curve(curve, res.loss_curve);
        std::printf("trained %d epochs on %zu pairs, final loss %.6g\n", tc.epochs, cands.size(),
                    res.loss_curve.empty() ? 0.0 : res.loss_curve.back());
    });

    // --- detect ----------------------------------------------------------------
    auto* c_detect = app.add_subcommand("detect", "run inference on a sequence");
    ExtractConfig dex;
    PeakConfig pk;
    std::string de_in, de_ckpt, de_out;
    c_detect->add_option("--in", de_in, "sequence directory")->required();
    c_detect->add_option("--ckpt", de_ckpt, "trained checkpoint")->required();
    c_detect->add_option("--out", de_out, "detections CSV")->required();
    c_detect->add_option("--theta-peak", pk.theta_peak)->capture_default_str();
    c_detect->add_option("--radius-x", pk.radius_x)->capture_default_str();
    c_detect->add_option("--radius-y", pk.radius_y)->capture_default_str();
    c_detect->add_option("--radius-t", pk.radius_t)->capture_default_str();
    c_detect->add_option("--merge-x", pk.merge_x)->capture_default_str();
    c_detect->add_option("--merge-y", pk.merge_y)->capture_default_str();
    c_detect->add_option("--merge-t", pk.merge_t)->capture_default_str();
    add_extract_flags(c_detect, dex);
    c_detect->callback([&] {
        const auto seq = load_sequence(de_in);
        const Checkpoint ckpt = load_checkpoint(de_ckpt);
        const auto dets = detect(seq, ckpt.arch, ckpt.params, dex, pk, resolve_threads(threads));
        write_detections(de_out, dets);
        std::printf("wrote %zu detections to %s\n", dets.size(), de_out.c_str());
    });

    // --- eval -------------------------------------------------------------------
    auto* c_eval = app.add_subcommand("eval", "match detections against ground truth");
    std::string ev_dets, ev_gts, ev_out;
    double ev_tau_t = 6.0, ev_tau_s = 15.0, ev_base = 0.0;
    bool ev_cheby = false;
    c_eval->add_option("--dets", ev_dets)->required();
    c_eval->add_option("--gts", ev_gts)->required();
    c_eval->add_option("--tau-t", ev_tau_t, "temporal tolerance, frames")->capture_default_str();
    c_eval->add_option("--tau-s", ev_tau_s, "spatial tolerance, px")->capture_default_str();
    c_eval->add_flag("--chebyshev", ev_cheby, "per-axis spatial criterion instead of Euclidean");
    c_eval->add_option("--index-base", ev_base)->capture_default_str();
    c_eval->add_option("--out", ev_out, "metrics JSON")->required();
    c_eval->callback([&] {
        const auto dets = read_detections(ev_dets);
        const auto gts = read_annotations(ev_gts, ev_base);
        const MatchResult m = match(dets, gts, ev_tau_t, ev_tau_s, ev_cheby);
        const Prf p = prf(m);
        write_metrics(ev_out, {m.tp, m.fp, m.fn, p.precision, p.recall, p.f1});
        std::printf("tp=%d fp=%d fn=%d precision=%.4f recall=%.4f f1=%.4f\n", m.tp, m.fp, m.fn,
                    p.precision, p.recall, p.f1);
    });

    // --- sweep ---------------------------------------------------------------------
    auto* c_sweep = app.add_subcommand("sweep", "tolerance sweep curves");
    std::string sw_dets, sw_gts, sw_axis = "temporal", sw_out, sw_svg;
    std::vector<double> sw_values = {1, 2, 4, 6, 8};
    double sw_base = 0.0;
    bool sw_cheby = false;
    c_sweep->add_option("--dets", sw_dets)->required();
    c_sweep->add_option("--gts", sw_gts)->required();
    c_sweep->add_option("--axis", sw_axis, "temporal | spatial")->capture_default_str();
    c_sweep->add_option("--values", sw_values, "thresholds to sweep")
        ->delimiter(',')
        ->capture_default_str();
    c_sweep->add_flag("--chebyshev", sw_cheby);
    c_sweep->add_option("--index-base", sw_base)->capture_default_str();
    c_sweep->add_option("--out", sw_out, "sweep CSV")->required();
    c_sweep->add_option("--svg", sw_svg, "optional line-chart SVG");
    c_sweep->callback([&] {
        SweepAxis axis;
        if (sw_axis == "temporal")
            axis = SweepAxis::Temporal;
        else if (sw_axis == "spatial")
            axis = SweepAxis::Spatial;
        else
            throw ConfigError("--axis must be 'temporal' or 'spatial'");
        const auto dets = read_detections(sw_dets);
        const auto gts = read_annotations(sw_gts, sw_base);
        const auto points = sweep(dets, gts, axis, sw_values, sw_cheby);
        std::vector<SweepRow> rows;
        for (const auto& p : points) rows.push_back({p.threshold, p.precision, p.recall, p.f1});
        write_sweep(sw_out, sw_axis, rows);
        if (!sw_svg.empty()) write_sweep_svg(sw_svg, axis, points);
        std::printf("swept %zu thresholds on the %s axis\n", points.size(), sw_axis.c_str());
    });

    // --- gradcheck -------------------------------------------------------------------
    auto* c_grad = app.add_subcommand("gradcheck", "verify backward against finite differences");
    int gc_levels = 2, gc_base = 8, gc_w = 8, gc_h = 8, gc_d = 8;
    std::uint64_t gc_seed = 7;
    double gc_eps = 1e-4, gc_tol = 1e-5;
    c_grad->add_option("--levels", gc_levels)->capture_default_str();
    c_grad->add_option("--base-channels", gc_base)->capture_default_str();
    c_grad->add_option("--width", gc_w)->capture_default_str();
    c_grad->add_option("--height", gc_h)->capture_default_str();
    c_grad->add_option("--depth", gc_d)->capture_default_str();
    c_grad->add_option("--seed", gc_seed)->capture_default_str();
    c_grad->add_option("--eps", gc_eps, "finite-difference step")->capture_default_str();
    c_grad->add_option("--tol", gc_tol, "max allowed relative error")->capture_default_str();
    c_grad->callback([&] {
        const Architecture arch = vnet_lite(gc_levels, gc_base);
        const GradCheckReport rep =
            grad_check(arch, gc_w, gc_h, gc_d, gc_seed, gc_eps, true, resolve_threads(threads));
        std::printf("%-4s %-10s %10s %14s\n", "idx", "layer", "params", "max rel err");
        for (std::size_t i = 0; i < rep.layers.size(); ++i)
            std::printf("%-4zu %-10s %10lld %14.3e\n", i, rep.layers[i].name.c_str(),
                        static_cast<long long>(rep.layers[i].params), rep.layers[i].max_rel_err);
        std::printf("%-4s %-10s %10s %14.3e\n", "-", "input", "-", rep.input_max_rel_err);
        std::printf("overall max relative error: %.3e (tolerance %.1e)\n", rep.max_rel_err, gc_tol);
        if (rep.max_rel_err > gc_tol)
            throw Error("gradient check failed: " + std::to_string(rep.max_rel_err) + " > tolerance");
        std::printf("gradient check passed\n");
    });

    // --- pipeline ---------------------------------------------------------------------
    auto* c_pipe = app.add_subcommand("pipeline", "run the full pipeline from a JSON config");
    std::string pl_config, pl_out;
    bool pl_force = false;
    c_pipe->add_option("--config", pl_config, "JSON config")->required();
    c_pipe->add_option("--out", pl_out, "run directory")->required();
    c_pipe->add_flag("--force", pl_force, "allow writing into a non-empty run directory");
    c_pipe->callback([&] { run_pipeline(pl_config, pl_out, pl_force, threads); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
