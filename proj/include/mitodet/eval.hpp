#pragma once

#include "mitodet/core.hpp"

#include <string>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// Contest-style one-to-one matching: a detection can pair with a ground-truth
// event when |dt| <= tau_t and the spatial distance is <= tau_s (Euclidean by
// default, per-axis Chebyshev behind a flag). Among all maximum-cardinality
// assignments the one with minimum total spatial distance is chosen, so
// growing either tolerance never loses true positives.
// ---------------------------------------------------------------------------

struct MatchPair {
    int det = -1;
    int gt = -1;
    double dist_spatial = 0.0;
    double dt = 0.0;
};

struct MatchResult {
    std::vector<MatchPair> pairs;
    int tp = 0, fp = 0, fn = 0;
};

MatchResult match(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                  double tau_t = 6.0, double tau_s = 15.0, bool chebyshev = false);

struct Prf {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); all 0/0 cases yield 0.
Prf prf(int tp, int fp, int fn);
inline Prf prf(const MatchResult& m) { return prf(m.tp, m.fp, m.fn); }

enum class SweepAxis { Temporal, Spatial };

struct SweepPoint {
    double threshold = 0.0;
    int tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Re-evaluates the match at each threshold along one axis, holding the other
/// at its default (6 frames / 15 px).
std::vector<SweepPoint> sweep(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                              SweepAxis axis, const std::vector<double>& thresholds,
                              bool chebyshev = false);

/// Self-contained SVG line chart of precision/recall/F1 against the swept
/// threshold.
void write_sweep_svg(const std::string& path, SweepAxis axis, const std::vector<SweepPoint>& points);

}  // namespace mitodet
