#pragma once

#include "mitodet/candidates.hpp"
#include "mitodet/core.hpp"
#include "mitodet/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <tuple>
#include <vector>

namespace mitodet {

struct PeakConfig {
    double theta_peak = 0.3;
    int radius_x = 5, radius_y = 5, radius_t = 2;        // local-maximum neighborhood
    int merge_x = 7, merge_y = 7, merge_t = 3;           // cross-window dedup radius

    void validate() const {
        if (!(theta_peak > 0.0 && theta_peak < 1.0))
            throw ConfigError("detect.theta_peak must lie in (0,1)");
        if (radius_x < 0 || radius_y < 0 || radius_t < 0 || merge_x < 0 || merge_y < 0 || merge_t < 0)
            throw ConfigError("detect radii must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// A voxel is a peak iff its value >= theta and no neighbor within the given
// per-axis radius beats it: strictly greater always wins, equal values win
// only against lexicographically (t,y,x)-later voxels, so a flat plateau
// yields exactly one point at its first voxel. Padded slices take part
// neither as peaks nor as neighbors. Results come out in (t,y,x) order.
// ---------------------------------------------------------------------------

template <typename Scalar>
std::vector<Detection> local_maxima(const Volume3<Scalar>& vol, double theta, int rx, int ry, int rt,
                                    const std::vector<std::uint8_t>* pad_mask = nullptr) {
    auto padded = [&](int t) {
        return pad_mask && (*pad_mask)[static_cast<std::size_t>(t)] != 0;
    };
    std::vector<Detection> peaks;
    for (int t = 0; t < vol.depth; ++t) {
        if (padded(t)) continue;
        for (int y = 0; y < vol.height; ++y) {
            for (int x = 0; x < vol.width; ++x) {
                const Scalar v = vol.at(x, y, t);
                if (static_cast<double>(v) < theta) continue;
                bool best = true;
                for (int dt = -rt; dt <= rt && best; ++dt) {
                    const int qt = t + dt;
                    if (qt < 0 || qt >= vol.depth || padded(qt)) continue;
                    for (int dy = -ry; dy <= ry && best; ++dy) {
                        const int qy = y + dy;
                        if (qy < 0 || qy >= vol.height) continue;
                        for (int dx = -rx; dx <= rx; ++dx) {
                            const int qx = x + dx;
                            if (qx < 0 || qx >= vol.width) continue;
                            if (dx == 0 && dy == 0 && dt == 0) continue;
                            const Scalar q = vol.at(qx, qy, qt);
                            if (q > v) {
                                best = false;
                                break;
                            }
                            if (q == v &&
                                std::make_tuple(qt, qy, qx) < std::make_tuple(t, y, x)) {
                                best = false;
                                break;
                            }
                        }
                    }
                }
                if (best)
                    peaks.push_back({{static_cast<double>(x), static_cast<double>(y),
                                      static_cast<double>(t)},
                                     static_cast<double>(v)});
            }
        }
    }
    return peaks;
}

/// Greedy score-descending suppression: a detection within the per-axis merge
/// radius of an already-kept one is dropped. The kept set is pairwise
/// conflict-free, so merging is idempotent. Output sorted by (t,y,x).
inline std::vector<Detection> merge_detections(std::vector<Detection> dets, int mx, int my, int mt) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::make_tuple(a.point.t, a.point.y, a.point.x) <
               std::make_tuple(b.point.t, b.point.y, b.point.x);
    });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (std::abs(d.point.x - k.point.x) <= mx && std::abs(d.point.y - k.point.y) <= my &&
                std::abs(d.point.t - k.point.t) <= mt) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
        return std::make_tuple(a.point.t, a.point.y, a.point.x) <
               std::make_tuple(b.point.t, b.point.y, b.point.x);
    });
    return kept;
}

/// Full inference: extract candidates, run the network on each, lift local
/// peaks to global coordinates, deduplicate across overlapping windows.
/// Peaks landing outside the observed sequence extent (possible in the
/// zero-filled crop margins) are discarded. Sorted by (t,y,x).
template <typename Scalar>
std::vector<Detection> detect(const ImageSequence<Scalar>& seq, const Architecture& arch,
                              const FlatArray<Scalar>& params, const ExtractConfig& ecfg,
                              const PeakConfig& pcfg, int threads = 1) {
    pcfg.validate();
    std::vector<CandidateSequence<Scalar>> cands = extract(seq, ecfg, threads);
    std::vector<Detection> all;
    for (const auto& cand : cands) {
        const Volume3<Scalar> out = forward_volume(arch, params, cand.volume, threads);
        for (Detection d :
             local_maxima(out, pcfg.theta_peak, pcfg.radius_x, pcfg.radius_y, pcfg.radius_t,
                          &cand.meta.pad_mask)) {
            d.point = to_global(d.point, cand.meta);
            if (d.point.x < 0 || d.point.x >= seq.width || d.point.y < 0 ||
                d.point.y >= seq.height || d.point.t < 0 || d.point.t >= seq.num_frames())
                continue;
            all.push_back(d);
        }
    }
    return merge_detections(std::move(all), pcfg.merge_x, pcfg.merge_y, pcfg.merge_t);
}

}  // namespace mitodet
