#pragma once

#include "mitodet/candidates.hpp"
#include "mitodet/core.hpp"
#include "mitodet/detect.hpp"
#include "mitodet/io.hpp"
#include "mitodet/synth.hpp"
#include "mitodet/targets.hpp"
#include "mitodet/train.hpp"

#include <json.hpp>
#include <string>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// One JSON config drives the whole run: synth (or input directories),
// extract, targets, net, train, detect, eval sections, each mirroring the
// module parameters. Unknown keys are rejected by full path; the fully
// defaulted config is echoed to resolved_config.json inside the run dir.
// ---------------------------------------------------------------------------

struct PipelineConfig {
    int threads = 0;  // 0 = all hardware threads
    bool use_synth = true;
    SynthConfig synth;
    std::uint64_t train_seed = 1;
    std::uint64_t test_seed = 2;
    std::string train_dir, train_annotations, test_dir, test_annotations;
    ExtractConfig extract;
    SigmaParams sigma;
    int net_levels = 2;
    int net_base = 8;
    TrainConfig train;
    PeakConfig detect;
    double tau_t = 6.0;
    double tau_s = 15.0;
    bool chebyshev = false;
};

/// Validates section/key names and types, applies defaults, and returns the
/// parsed config; `resolved` receives the fully explicit JSON echo.
PipelineConfig resolve_config(const nlohmann::json& user, nlohmann::json& resolved);

// Candidate/target directory layout shared by the CLI stages:
// cand_0000.vol + cand_0000.json, target_0000.vol, ...
void save_candidates_dir(const std::string& dir, const std::vector<CandidateSequence<float>>& cands);
std::vector<CandidateSequence<float>> load_candidates_dir(const std::string& dir);
void save_targets_dir(const std::string& dir, const std::vector<Volume3<float>>& targets);
std::vector<Volume3<float>> load_targets_dir(const std::string& dir);

struct PipelineResult {
    MetricsReport metrics;
    int n_candidates = 0;
    int n_detections = 0;
};

/// synth (or load) -> extract -> targets -> train -> detect -> eval, writing
/// every artifact under `out_dir`. Refuses a non-empty out_dir unless
/// `force`. `threads_override` >= 1 replaces the config's thread count.
PipelineResult run_pipeline(const std::string& config_path, const std::string& out_dir, bool force,
                            int threads_override = 0, bool verbose = true);

}  // namespace mitodet
