#pragma once

#include "mitodet/core.hpp"

#include <cstdint>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// Deterministic synthetic sequences with exact ground truth. Each division
// event is a Gaussian blob that brightens over `ramp` frames, peaks at the
// annotated frame, then splits into two dimmer blobs drifting apart at
// 1.5 px/frame for 6 frames before fading. Distractors brighten, hold, and
// fade without splitting. Background is low-amplitude static value noise.
// ---------------------------------------------------------------------------

struct SynthConfig {
    int width = 256;
    int height = 256;
    int frames = 64;
    int n_events = 6;
    int n_close_pairs = 0;  // of the events, this many pairs land close enough
                            // (space and time) to share one candidate window
    int n_distractors = 3;
    double peak = 0.9;            // event peak intensity
    double radius = 4.5;          // blob Gaussian radius in px
    int ramp = 6;                 // brightening frames before the peak
    double bg_amplitude = 0.05;   // background noise level
    double min_separation = 30.0; // pairwise center distance floor, px
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthResult {
    ImageSequence<float> seq;
    std::vector<Annotation> annotations;
};

SynthResult generate(const SynthConfig& cfg);

}  // namespace mitodet
