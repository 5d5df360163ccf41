#include "mitodet/pipeline.hpp"

#include "mitodet/eval.hpp"
#include "mitodet/parallel.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mitodet {

namespace {

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> known) {
    if (!obj.is_object())
        throw ConfigError("config section '" + section + "' must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::none_of(known.begin(), known.end(),
                         [&](const char* k) { return it.key() == k; })) {
            const std::string path = section.empty() ? it.key() : section + "." + it.key();
            throw ConfigError("unknown config key '" + path + "'");
        }
    }
}

std::string key_path(const std::string& sec, const char* key) {
    return sec.empty() ? key : sec + "." + key;
}

double get_num(const json& o, const std::string& sec, const char* key, double def) {
    if (!o.contains(key)) return def;
    const json& v = o.at(key);
    if (!v.is_number()) throw ConfigError("config key '" + key_path(sec, key) + "' must be a number");
    return v.get<double>();
}

int get_int(const json& o, const std::string& sec, const char* key, int def) {
    if (!o.contains(key)) return def;
    const json& v = o.at(key);
    if (!v.is_number_integer())
        throw ConfigError("config key '" + key_path(sec, key) + "' must be an integer");
    return v.get<int>();
}

std::uint64_t get_u64(const json& o, const std::string& sec, const char* key, std::uint64_t def) {
    if (!o.contains(key)) return def;
    const json& v = o.at(key);
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)))
        throw ConfigError("config key '" + key_path(sec, key) + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

bool get_bool(const json& o, const std::string& sec, const char* key, bool def) {
    if (!o.contains(key)) return def;
    const json& v = o.at(key);
    if (!v.is_boolean()) throw ConfigError("config key '" + key_path(sec, key) + "' must be a boolean");
    return v.get<bool>();
}

std::string get_str(const json& o, const std::string& sec, const char* key, const std::string& def) {
    if (!o.contains(key)) return def;
    const json& v = o.at(key);
    if (!v.is_string()) throw ConfigError("config key '" + key_path(sec, key) + "' must be a string");
    return v.get<std::string>();
}

json section(const json& user, const char* name) {
    return user.contains(name) ? user.at(name) : json::object();
}

template <typename Fn>
auto run_stage(const std::string& name, Fn&& fn) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        throw ConfigError("stage " + name + ": " + e.what());
    } catch (const Error& e) {
        throw Error("stage " + name + ": " + e.what());
    } catch (const std::exception& e) {
        throw Error("stage " + name + ": " + e.what());
    }
}

std::string seq_name(const char* stem, int i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04d", stem, i);
    return buf;
}

}  // namespace

PipelineConfig resolve_config(const json& user, json& resolved) {
    if (!user.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(user, "",
               {"threads", "synth", "input", "extract", "targets", "net", "train", "detect", "eval"});
    if (user.contains("synth") && user.contains("input"))
        throw ConfigError("config must have either 'synth' or 'input', not both");

    PipelineConfig cfg;
    cfg.threads = get_int(user, "", "threads", 0);
    if (cfg.threads < 0) throw ConfigError("config key 'threads' must be >= 0");

    const json jsynth = section(user, "synth");
    const json jinput = section(user, "input");
    cfg.use_synth = !user.contains("input");
    check_keys(jsynth, "synth",
               {"width", "height", "frames", "events", "close_pairs", "distractors", "peak",
                "radius", "ramp", "bg_amplitude", "min_separation", "train_seed", "test_seed"});
    cfg.synth.width = get_int(jsynth, "synth", "width", cfg.synth.width);
    cfg.synth.height = get_int(jsynth, "synth", "height", cfg.synth.height);
    cfg.synth.frames = get_int(jsynth, "synth", "frames", cfg.synth.frames);
    cfg.synth.n_events = get_int(jsynth, "synth", "events", cfg.synth.n_events);
    cfg.synth.n_close_pairs = get_int(jsynth, "synth", "close_pairs", cfg.synth.n_close_pairs);
    cfg.synth.n_distractors = get_int(jsynth, "synth", "distractors", cfg.synth.n_distractors);
    cfg.synth.peak = get_num(jsynth, "synth", "peak", cfg.synth.peak);
    cfg.synth.radius = get_num(jsynth, "synth", "radius", cfg.synth.radius);
    cfg.synth.ramp = get_int(jsynth, "synth", "ramp", cfg.synth.ramp);
    cfg.synth.bg_amplitude = get_num(jsynth, "synth", "bg_amplitude", cfg.synth.bg_amplitude);
    cfg.synth.min_separation = get_num(jsynth, "synth", "min_separation", cfg.synth.min_separation);
    cfg.train_seed = get_u64(jsynth, "synth", "train_seed", cfg.train_seed);
    cfg.test_seed = get_u64(jsynth, "synth", "test_seed", cfg.test_seed);
    if (cfg.use_synth) {
        try {
            cfg.synth.validate();
        } catch (const ValidationError& e) {
            throw ConfigError(std::string("synth: ") + e.what());
        }
        if (cfg.train_seed == cfg.test_seed)
            throw ConfigError("synth.train_seed and synth.test_seed must differ");
    }

    check_keys(jinput, "input", {"train_dir", "train_annotations", "test_dir", "test_annotations"});
    cfg.train_dir = get_str(jinput, "input", "train_dir", "");
    cfg.train_annotations = get_str(jinput, "input", "train_annotations", "");
    cfg.test_dir = get_str(jinput, "input", "test_dir", "");
    cfg.test_annotations = get_str(jinput, "input", "test_annotations", "");
    if (!cfg.use_synth &&
        (cfg.train_dir.empty() || cfg.train_annotations.empty() || cfg.test_dir.empty() ||
         cfg.test_annotations.empty()))
        throw ConfigError("input requires train_dir, train_annotations, test_dir, test_annotations");

    const json jex = section(user, "extract");
    check_keys(jex, "extract",
               {"d", "theta_bin", "min_area", "tau_link", "normalize", "crop_width", "crop_height",
                "crop_depth", "slide"});
    cfg.extract.d = get_int(jex, "extract", "d", cfg.extract.d);
    cfg.extract.theta_bin = get_num(jex, "extract", "theta_bin", cfg.extract.theta_bin);
    cfg.extract.min_area = get_int(jex, "extract", "min_area", cfg.extract.min_area);
    cfg.extract.tau_link = get_num(jex, "extract", "tau_link", cfg.extract.tau_link);
    cfg.extract.normalize = get_bool(jex, "extract", "normalize", cfg.extract.normalize);
    cfg.extract.crop_width = get_int(jex, "extract", "crop_width", cfg.extract.crop_width);
    cfg.extract.crop_height = get_int(jex, "extract", "crop_height", cfg.extract.crop_height);
    cfg.extract.crop_depth = get_int(jex, "extract", "crop_depth", cfg.extract.crop_depth);
    cfg.extract.slide = get_int(jex, "extract", "slide", cfg.extract.slide);
    try {
        cfg.extract.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("extract: ") + e.what());
    }

    const json jt = section(user, "targets");
    check_keys(jt, "targets", {"sigma_x", "sigma_y", "sigma_t"});
    cfg.sigma.sigma_x = get_num(jt, "targets", "sigma_x", cfg.sigma.sigma_x);
    cfg.sigma.sigma_y = get_num(jt, "targets", "sigma_y", cfg.sigma.sigma_y);
    cfg.sigma.sigma_t = get_num(jt, "targets", "sigma_t", cfg.sigma.sigma_t);
    if (!(cfg.sigma.sigma_x > 0)) throw ConfigError("targets.sigma_x must be > 0");
    if (!(cfg.sigma.sigma_y > 0)) throw ConfigError("targets.sigma_y must be > 0");
    if (!(cfg.sigma.sigma_t > 0)) throw ConfigError("targets.sigma_t must be > 0");

    const json jn = section(user, "net");
    check_keys(jn, "net", {"levels", "base_channels"});
    cfg.net_levels = get_int(jn, "net", "levels", cfg.net_levels);
    cfg.net_base = get_int(jn, "net", "base_channels", cfg.net_base);
    if (cfg.net_levels < 1) throw ConfigError("net.levels must be >= 1");
    if (cfg.net_base < 1) throw ConfigError("net.base_channels must be >= 1");

    const json jtr = section(user, "train");
    check_keys(jtr, "train",
               {"lr", "optimizer", "beta1", "beta2", "adam_eps", "batch", "epochs", "seed",
                "checkpoint_interval", "loss_mode"});
    cfg.train.lr = get_num(jtr, "train", "lr", cfg.train.lr);
    const std::string opt = get_str(jtr, "train", "optimizer", "adam");
    if (opt == "adam")
        cfg.train.optimizer = Optimizer::Adam;
    else if (opt == "sgd")
        cfg.train.optimizer = Optimizer::Sgd;
    else
        throw ConfigError("train.optimizer must be 'adam' or 'sgd'");
    cfg.train.beta1 = get_num(jtr, "train", "beta1", cfg.train.beta1);
    cfg.train.beta2 = get_num(jtr, "train", "beta2", cfg.train.beta2);
    cfg.train.adam_eps = get_num(jtr, "train", "adam_eps", cfg.train.adam_eps);
    cfg.train.batch_size = get_int(jtr, "train", "batch", cfg.train.batch_size);
    cfg.train.epochs = get_int(jtr, "train", "epochs", cfg.train.epochs);
    cfg.train.seed = get_u64(jtr, "train", "seed", cfg.train.seed);
    cfg.train.checkpoint_interval =
        get_int(jtr, "train", "checkpoint_interval", cfg.train.checkpoint_interval);
    const std::string lm = get_str(jtr, "train", "loss_mode", "per-voxel-mean");
    if (lm == "per-voxel-mean")
        cfg.train.loss_mode = LossMode::PerVoxelMean;
    else if (lm == "sum")
        cfg.train.loss_mode = LossMode::Sum;
    else
        throw ConfigError("train.loss_mode must be 'per-voxel-mean' or 'sum'");
    try {
        cfg.train.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }

    const json jd = section(user, "detect");
    check_keys(jd, "detect",
               {"theta_peak", "radius_x", "radius_y", "radius_t", "merge_x", "merge_y", "merge_t"});
    cfg.detect.theta_peak = get_num(jd, "detect", "theta_peak", cfg.detect.theta_peak);
    cfg.detect.radius_x = get_int(jd, "detect", "radius_x", cfg.detect.radius_x);
    cfg.detect.radius_y = get_int(jd, "detect", "radius_y", cfg.detect.radius_y);
    cfg.detect.radius_t = get_int(jd, "detect", "radius_t", cfg.detect.radius_t);
    cfg.detect.merge_x = get_int(jd, "detect", "merge_x", cfg.detect.merge_x);
    cfg.detect.merge_y = get_int(jd, "detect", "merge_y", cfg.detect.merge_y);
    cfg.detect.merge_t = get_int(jd, "detect", "merge_t", cfg.detect.merge_t);
    try {
        cfg.detect.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("detect: ") + e.what());
    }

    const json je = section(user, "eval");
    check_keys(je, "eval", {"tau_t", "tau_s", "chebyshev"});
    cfg.tau_t = get_num(je, "eval", "tau_t", cfg.tau_t);
    cfg.tau_s = get_num(je, "eval", "tau_s", cfg.tau_s);
    cfg.chebyshev = get_bool(je, "eval", "chebyshev", cfg.chebyshev);
    if (cfg.tau_t < 0) throw ConfigError("eval.tau_t must be >= 0");
    if (cfg.tau_s < 0) throw ConfigError("eval.tau_s must be >= 0");

    // crop dims must survive the down/up path
    const int div = 1 << (cfg.net_levels - 1);
    if (cfg.extract.crop_width % div || cfg.extract.crop_height % div || cfg.extract.crop_depth % div)
        throw ConfigError("extract.crop dims must be divisible by 2^(net.levels-1) = " +
                          std::to_string(div));

    resolved = json::object();
    resolved["threads"] = cfg.threads;
    if (cfg.use_synth) {
        resolved["synth"] = {{"width", cfg.synth.width},
                             {"height", cfg.synth.height},
                             {"frames", cfg.synth.frames},
                             {"events", cfg.synth.n_events},
                             {"close_pairs", cfg.synth.n_close_pairs},
                             {"distractors", cfg.synth.n_distractors},
                             {"peak", cfg.synth.peak},
                             {"radius", cfg.synth.radius},
                             {"ramp", cfg.synth.ramp},
                             {"bg_amplitude", cfg.synth.bg_amplitude},
                             {"min_separation", cfg.synth.min_separation},
                             {"train_seed", cfg.train_seed},
                             {"test_seed", cfg.test_seed}};
    } else {
        resolved["input"] = {{"train_dir", cfg.train_dir},
                             {"train_annotations", cfg.train_annotations},
                             {"test_dir", cfg.test_dir},
                             {"test_annotations", cfg.test_annotations}};
    }
    resolved["extract"] = {{"d", cfg.extract.d},
                           {"theta_bin", cfg.extract.theta_bin},
                           {"min_area", cfg.extract.min_area},
                           {"tau_link", cfg.extract.tau_link},
                           {"normalize", cfg.extract.normalize},
                           {"crop_width", cfg.extract.crop_width},
                           {"crop_height", cfg.extract.crop_height},
                           {"crop_depth", cfg.extract.crop_depth},
                           {"slide", cfg.extract.slide}};
    resolved["targets"] = {{"sigma_x", cfg.sigma.sigma_x},
                           {"sigma_y", cfg.sigma.sigma_y},
                           {"sigma_t", cfg.sigma.sigma_t}};
    resolved["net"] = {{"levels", cfg.net_levels}, {"base_channels", cfg.net_base}};
    resolved["train"] = {{"lr", cfg.train.lr},
                         {"optimizer", opt},
                         {"beta1", cfg.train.beta1},
                         {"beta2", cfg.train.beta2},
                         {"adam_eps", cfg.train.adam_eps},
                         {"batch", cfg.train.batch_size},
                         {"epochs", cfg.train.epochs},
                         {"seed", cfg.train.seed},
                         {"checkpoint_interval", cfg.train.checkpoint_interval},
                         {"loss_mode", lm}};
    resolved["detect"] = {{"theta_peak", cfg.detect.theta_peak},
                          {"radius_x", cfg.detect.radius_x},
                          {"radius_y", cfg.detect.radius_y},
                          {"radius_t", cfg.detect.radius_t},
                          {"merge_x", cfg.detect.merge_x},
                          {"merge_y", cfg.detect.merge_y},
                          {"merge_t", cfg.detect.merge_t}};
    resolved["eval"] = {{"tau_t", cfg.tau_t}, {"tau_s", cfg.tau_s}, {"chebyshev", cfg.chebyshev}};
    return cfg;
}

void save_candidates_dir(const std::string& dir, const std::vector<CandidateSequence<float>>& cands) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const std::string stem = (fs::path(dir) / seq_name("cand", static_cast<int>(i))).string();
        save_volume(stem + ".vol", cands[i].volume);
        save_candidate_meta(stem + ".json",
                            {cands[i].meta, cands[i].track_id, cands[i].window_offset});
    }
}

std::vector<CandidateSequence<float>> load_candidates_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw CorruptFileError(dir + ": not a directory");
    std::vector<CandidateSequence<float>> cands;
    for (int i = 0;; ++i) {
        const std::string stem = (fs::path(dir) / seq_name("cand", i)).string();
        if (!fs::exists(stem + ".vol")) break;
        CandidateSequence<float> c;
        c.volume = load_volume(stem + ".vol");
        const CandidateMeta m = load_candidate_meta(stem + ".json");
        c.meta = m.meta;
        c.track_id = m.track_id;
        c.window_offset = m.window_offset;
        if (static_cast<int>(c.meta.pad_mask.size()) != c.volume.depth)
            throw CorruptFileError(stem + ": pad mask length does not match volume depth");
        cands.push_back(std::move(c));
    }
    if (cands.empty()) throw CorruptFileError(dir + ": no cand_NNNN.vol files found");
    return cands;
}

void save_targets_dir(const std::string& dir, const std::vector<Volume3<float>>& targets) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < targets.size(); ++i)
        save_volume((fs::path(dir) / (seq_name("target", static_cast<int>(i)) + ".vol")).string(),
                    targets[i]);
}

std::vector<Volume3<float>> load_targets_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw CorruptFileError(dir + ": not a directory");
    std::vector<Volume3<float>> targets;
    for (int i = 0;; ++i) {
        const std::string path =
            (fs::path(dir) / (seq_name("target", i) + ".vol")).string();
        if (!fs::exists(path)) break;
        targets.push_back(load_volume(path));
    }
    if (targets.empty()) throw CorruptFileError(dir + ": no target_NNNN.vol files found");
    return targets;
}

PipelineResult run_pipeline(const std::string& config_path, const std::string& out_dir, bool force,
                            int threads_override, bool verbose) {
    json user;
    {
        std::ifstream is(config_path);
        if (!is) throw ConfigError(config_path + ": cannot open config");
        try {
            is >> user;
        } catch (const json::exception& e) {
            throw ConfigError(config_path + ": " + e.what());
        }
    }
    json resolved;
    PipelineConfig cfg = resolve_config(user, resolved);

    fs::create_directories(out_dir);
    if (!force && !fs::is_empty(out_dir))
        throw ConfigError(out_dir + ": run directory not empty (pass --force to overwrite)");

    const int threads = resolve_threads(threads_override > 0 ? threads_override : cfg.threads);
    auto say = [&](const std::string& line) {
        if (verbose) std::printf("%s\n", line.c_str());
    };

    {
        std::ofstream os(fs::path(out_dir) / "resolved_config.json", std::ios::binary);
        os << resolved.dump(2) << '\n';
    }

    // --- data ---------------------------------------------------------------
    ImageSequence<float> train_seq, test_seq;
    std::vector<Annotation> train_gt, test_gt;
    if (cfg.use_synth) {
        run_stage("synth", [&] {
            SynthConfig sc = cfg.synth;
            sc.seed = cfg.train_seed;
            SynthResult a = generate(sc);
            sc.seed = cfg.test_seed;
            SynthResult b = generate(sc);
            train_seq = std::move(a.seq);
            train_gt = std::move(a.annotations);
            test_seq = std::move(b.seq);
            test_gt = std::move(b.annotations);
            save_sequence((fs::path(out_dir) / "train_frames").string(), train_seq, 16);
            save_sequence((fs::path(out_dir) / "test_frames").string(), test_seq, 16);
            write_annotations((fs::path(out_dir) / "train_annotations.csv").string(), train_gt);
            write_annotations((fs::path(out_dir) / "test_annotations.csv").string(), test_gt);
            return 0;
        });
        say("[synth] train: " + std::to_string(train_gt.size()) + " events, test: " +
            std::to_string(test_gt.size()) + " events");
    } else {
        run_stage("input", [&] {
            train_seq = load_sequence(cfg.train_dir);
            train_gt = read_annotations(cfg.train_annotations);
            test_seq = load_sequence(cfg.test_dir);
            test_gt = read_annotations(cfg.test_annotations);
            return 0;
        });
        const auto bad_train =
            out_of_bounds(train_gt, train_seq.width, train_seq.height, train_seq.num_frames());
        const auto bad_test =
            out_of_bounds(test_gt, test_seq.width, test_seq.height, test_seq.num_frames());
        for (auto i : bad_train)
            say("[input] warning: train annotation row " + std::to_string(i + 2) + " out of bounds");
        for (auto i : bad_test)
            say("[input] warning: test annotation row " + std::to_string(i + 2) + " out of bounds");
        say("[input] train: " + std::to_string(train_gt.size()) + " events, test: " +
            std::to_string(test_gt.size()) + " events");
    }

    // --- extract + targets ----------------------------------------------------
    std::vector<CandidateSequence<float>> cands;
    run_stage("extract", [&] {
        cands = extract(train_seq, cfg.extract, threads);
        save_candidates_dir((fs::path(out_dir) / "candidates").string(), cands);
        return 0;
    });
    if (cands.empty())
        throw Error("stage extract: no candidates extracted from the training sequence");
    say("[extract] " + std::to_string(cands.size()) + " candidate volumes");

    std::vector<Volume3<float>> targets;
    run_stage("targets", [&] {
        for (const auto& c : cands) targets.push_back(build_targets(c, train_gt, cfg.sigma));
        save_targets_dir((fs::path(out_dir) / "targets").string(), targets);
        return 0;
    });

    // --- train ------------------------------------------------------------------
    const Architecture arch = vnet_lite(cfg.net_levels, cfg.net_base);
    TrainConfig tc = cfg.train;
    tc.threads = threads;
    TrainResult<float> tr;
    run_stage("train", [&] {
        CheckpointFn<float> cb = [&](int epoch, const FlatArray<float>& params, std::uint64_t stp) {
            char name[64];
            std::snprintf(name, sizeof(name), "model_epoch%04d.ckpt", epoch + 1);
            save_checkpoint((fs::path(out_dir) / name).string(), {arch, params, stp, tc.seed});
        };
        tr = train(arch, cands, targets, tc, tc.checkpoint_interval > 0 ? cb : CheckpointFn<float>{});
        save_checkpoint((fs::path(out_dir) / "model.ckpt").string(),
                        {arch, tr.params, tr.steps, tc.seed});
        write_loss_curve((fs::path(out_dir) / "loss_curve.csv").string(), tr.loss_curve);
        return 0;
    });
    if (!tr.loss_curve.empty())
        say("[train] " + std::to_string(tc.epochs) + " epochs, final loss " +
            std::to_string(tr.loss_curve.back()));

    // --- detect + eval -----------------------------------------------------------
    std::vector<Detection> dets;
    run_stage("detect", [&] {
        dets = detect(test_seq, arch, tr.params, cfg.extract, cfg.detect, threads);
        write_detections((fs::path(out_dir) / "detections.csv").string(), dets);
        return 0;
    });
    say("[detect] " + std::to_string(dets.size()) + " detections on the held-out sequence");

    PipelineResult res;
    run_stage("eval", [&] {
        const MatchResult m = match(dets, test_gt, cfg.tau_t, cfg.tau_s, cfg.chebyshev);
        const Prf p = prf(m);
        res.metrics = {m.tp, m.fp, m.fn, p.precision, p.recall, p.f1};
        write_metrics((fs::path(out_dir) / "metrics.json").string(), res.metrics);
        return 0;
    });
    res.n_candidates = static_cast<int>(cands.size());
    res.n_detections = static_cast<int>(dets.size());
    char line[160];
    std::snprintf(line, sizeof(line), "[eval] tp=%d fp=%d fn=%d precision=%.4f recall=%.4f f1=%.4f",
                  res.metrics.tp, res.metrics.fp, res.metrics.fn, res.metrics.precision,
                  res.metrics.recall, res.metrics.f1);
    say(line);
    return res;
}

}  // namespace mitodet
