#include <doctest.h>

#include "mitodet/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <string>

using namespace mitodet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mitodet_pipe_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

json tiny_config() {
    return json{{"threads", 1},
                {"synth",
                 {{"width", 96},
                  {"height", 96},
                  {"frames", 24},
                  {"events", 1},
                  {"distractors", 0},
                  {"train_seed", 7},
                  {"test_seed", 8}}},
                {"extract", {{"crop_width", 32}, {"crop_height", 32}, {"crop_depth", 8}, {"slide", 8}}},
                {"net", {{"levels", 2}, {"base_channels", 4}}},
                {"train", {{"epochs", 2}, {"lr", 0.001}, {"batch", 2}, {"seed", 3}}}};
}

}  // namespace

TEST_CASE("unknown config keys are rejected by full path") {
    json resolved;
    json cfg = tiny_config();
    cfg["train"]["lrr"] = 0.1;
    CHECK_THROWS_WITH_AS(resolve_config(cfg, resolved), doctest::Contains("train.lrr"),
                         ConfigError);

    cfg = tiny_config();
    cfg["bogus"] = 1;
    CHECK_THROWS_WITH_AS(resolve_config(cfg, resolved), doctest::Contains("bogus"), ConfigError);

    cfg = tiny_config();
    cfg["detect"] = json{{"theta_peek", 0.3}};
    CHECK_THROWS_WITH_AS(resolve_config(cfg, resolved), doctest::Contains("detect.theta_peek"),
                         ConfigError);
}

TEST_CASE("config values are validated with their key paths") {
    json resolved;
    json cfg = tiny_config();
    cfg["targets"] = json{{"sigma_t", 0.0}};
    CHECK_THROWS_WITH_AS(resolve_config(cfg, resolved), doctest::Contains("sigma_t"), ConfigError);

    cfg = tiny_config();
    cfg["train"]["optimizer"] = "rmsprop";
    CHECK_THROWS_AS(resolve_config(cfg, resolved), ConfigError);

    cfg = tiny_config();
    cfg["synth"]["train_seed"] = 5;
    cfg["synth"]["test_seed"] = 5;
    CHECK_THROWS_WITH_AS(resolve_config(cfg, resolved), doctest::Contains("seed"), ConfigError);

    cfg = tiny_config();
    cfg["extract"]["crop_depth"] = 9;  // not divisible by the net's downsampling
    CHECK_THROWS_AS(resolve_config(cfg, resolved), ConfigError);
}

TEST_CASE("providing both synth and input sections is a contradiction") {
    json resolved;
    json cfg = tiny_config();
    cfg["input"] = json{{"train_dir", "a"},
                        {"train_annotations", "a.csv"},
                        {"test_dir", "b"},
                        {"test_annotations", "b.csv"}};
    CHECK_THROWS_AS(resolve_config(cfg, resolved), ConfigError);
}

TEST_CASE("the resolved echo spells out every default") {
    json resolved;
    const PipelineConfig cfg = resolve_config(tiny_config(), resolved);
    CHECK(cfg.train.epochs == 2);
    CHECK(cfg.net_base == 4);
    CHECK(resolved["extract"]["d"] == 5);
    CHECK(resolved["extract"]["theta_bin"] == 0.5);
    CHECK(resolved["targets"]["sigma_x"] == 5.0);
    CHECK(resolved["detect"]["theta_peak"] == 0.3);
    CHECK(resolved["eval"]["tau_t"] == 6.0);
    CHECK(resolved["eval"]["tau_s"] == 15.0);
    CHECK(resolved["train"]["optimizer"] == "adam");
    CHECK(resolved["train"]["loss_mode"] == "per-voxel-mean");
}

TEST_CASE("optimizer and loss names map onto the enums") {
    json resolved;
    json cfg = tiny_config();
    cfg["train"]["optimizer"] = "sgd";
    cfg["train"]["loss_mode"] = "sum";
    const PipelineConfig out = resolve_config(cfg, resolved);
    CHECK(out.train.optimizer == Optimizer::Sgd);
    CHECK(out.train.loss_mode == LossMode::Sum);
}

TEST_CASE("candidate and target directories round-trip") {
    TempDir tmp;
    std::vector<CandidateSequence<float>> cands(2);
    cands[0].volume = Volume3<float>(8, 8, 4);
    cands[0].volume.data.setConstant(0.25f);
    cands[0].meta.origin_x = -3;
    cands[0].meta.pad_mask = {0, 0, 1, 1};
    cands[0].track_id = 1;
    cands[1].volume = Volume3<float>(8, 8, 4);
    cands[1].meta.pad_mask = {0, 0, 0, 0};
    cands[1].window_offset = 8;

    save_candidates_dir(tmp.path.string(), cands);
    const auto back = load_candidates_dir(tmp.path.string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].meta.origin_x == -3);
    CHECK(back[0].meta.pad_mask == cands[0].meta.pad_mask);
    CHECK((back[0].volume.data == cands[0].volume.data).all());
    CHECK(back[1].window_offset == 8);

    std::vector<Volume3<float>> targets(2, Volume3<float>(8, 8, 4));
    targets[1].data.setConstant(0.5f);
    save_targets_dir(tmp.path.string(), targets);
    const auto tback = load_targets_dir(tmp.path.string());
    REQUIRE(tback.size() == 2);
    CHECK((tback[1].data == targets[1].data).all());
}

TEST_CASE("the pipeline writes every artifact and refuses to clobber") {
    TempDir tmp;
    {
        std::ofstream os(tmp.file("config.json"));
        os << tiny_config().dump(2);
    }
    const std::string out = tmp.file("run");
    const PipelineResult res = run_pipeline(tmp.file("config.json"), out, false, 0, false);
    CHECK(res.n_candidates > 0);

    CHECK(fs::exists(fs::path(out) / "resolved_config.json"));
    CHECK(fs::exists(fs::path(out) / "train_frames" / "frame_00000.png"));
    CHECK(fs::exists(fs::path(out) / "train_annotations.csv"));
    CHECK(fs::exists(fs::path(out) / "test_annotations.csv"));
    CHECK(fs::exists(fs::path(out) / "candidates" / "cand_0000.vol"));
    CHECK(fs::exists(fs::path(out) / "candidates" / "cand_0000.json"));
    CHECK(fs::exists(fs::path(out) / "targets" / "target_0000.vol"));
    CHECK(fs::exists(fs::path(out) / "model.ckpt"));
    CHECK(fs::exists(fs::path(out) / "loss_curve.csv"));
    CHECK(fs::exists(fs::path(out) / "detections.csv"));
    CHECK(fs::exists(fs::path(out) / "metrics.json"));

    // non-empty output dir without force
    CHECK_THROWS_AS(run_pipeline(tmp.file("config.json"), out, false, 0, false), ConfigError);
    // force overwrites in place
    CHECK_NOTHROW(run_pipeline(tmp.file("config.json"), out, true, 0, false));
}

TEST_CASE("identical configs give byte-identical artifacts across runs and thread counts") {
    TempDir tmp;
    {
        std::ofstream os(tmp.file("config.json"));
        os << tiny_config().dump(2);
    }
    const std::string a = tmp.file("a"), b = tmp.file("b"), c = tmp.file("c");
    run_pipeline(tmp.file("config.json"), a, false, 1, false);
    run_pipeline(tmp.file("config.json"), b, false, 1, false);
    run_pipeline(tmp.file("config.json"), c, false, 4, false);

    for (const char* name : {"loss_curve.csv", "detections.csv", "metrics.json"}) {
        const std::string fa = slurp((fs::path(a) / name).string());
        CHECK(fa == slurp((fs::path(b) / name).string()));
        CHECK(fa == slurp((fs::path(c) / name).string()));
        CHECK(!fa.empty());
    }
}
