#pragma once

#include "mitodet/core.hpp"
#include "mitodet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// Candidate patch-sequence extraction: bright regions are averaged, binarized
// and labeled per frame, the resulting boxes linked across frames by centroid
// distance, and each track cropped into fixed-size volumes.
// ---------------------------------------------------------------------------

struct Box {
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    double cx = 0.0, cy = 0.0;  // component centroid (pixel mass center)
    int area = 0;
};

struct FrameBoxes {
    int t = 0;
    std::vector<Box> boxes;
};

struct TrackEntry {
    int t = 0;
    Box box;
};

/// Boxes associated over strictly consecutive frames.
struct CandidateTrack {
    int id = 0;
    std::vector<TrackEntry> entries;

    int start_t() const { return entries.front().t; }
    int length() const { return static_cast<int>(entries.size()); }
};

/// One fixed-size crop window of a track, plus the metadata to undo the crop.
template <typename Scalar = float>
struct CandidateSequence {
    Volume3<Scalar> volume;
    CropMeta meta;
    int track_id = 0;
    int window_offset = 0;
};

struct ExtractConfig {
    int d = 5;               // average-filter side (odd)
    double theta_bin = 0.5;  // binarization threshold
    int min_area = 9;        // components below this pixel count are dropped
    double tau_link = 30.0;  // max centroid distance for frame-to-frame links
    bool normalize = true;   // per-sequence contrast rescale to [0,1] first
    int crop_width = 128;
    int crop_height = 128;
    int crop_depth = 16;
    int slide = 8;  // temporal window stride

    void validate() const {
        if (d < 1 || d % 2 == 0) throw BadKernelError("extract.d must be odd and positive");
        if (!(theta_bin > 0.0 && theta_bin < 1.0))
            throw ConfigError("extract.theta_bin must lie in (0,1)");
        if (min_area < 0) throw ConfigError("extract.min_area must be >= 0");
        if (tau_link < 0.0) throw ConfigError("extract.tau_link must be >= 0");
        if (crop_width < 1 || crop_height < 1 || crop_depth < 1 || slide < 1)
            throw ConfigError("extract crop dims and slide must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// average_filter: d x d box mean with zero extension at the borders (the
// denominator stays d*d everywhere). Summed-area table, accumulated in double.
// ---------------------------------------------------------------------------

template <typename Scalar>
Image<Scalar> average_filter(const Image<Scalar>& frame, int d) {
    const int h = static_cast<int>(frame.rows());
    const int w = static_cast<int>(frame.cols());
    if (d < 1 || d % 2 == 0) throw BadKernelError("average_filter: d must be odd and positive");
    if (d > std::min(w, h)) throw BadKernelError("average_filter: d exceeds frame dims");

    ImageD sat = ImageD::Zero(h + 1, w + 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            sat(y + 1, x + 1) = static_cast<double>(frame(y, x)) + sat(y, x + 1) + sat(y + 1, x) - sat(y, x);

    const int r = d / 2;
    const double inv = 1.0 / (static_cast<double>(d) * d);
    Image<Scalar> out(h, w);
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
        for (int x = 0; x < w; ++x) {
            const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
            const double sum = sat(y1 + 1, x1 + 1) - sat(y0, x1 + 1) - sat(y1 + 1, x0) + sat(y0, x0);
            out(y, x) = static_cast<Scalar>(sum * inv);
        }
    }
    return out;
}

/// mask[p] = frame[p] >= theta (inclusive).
template <typename Scalar>
Mask binarize(const Image<Scalar>& frame, double theta) {
    return (frame.template cast<double>() >= theta).template cast<std::uint8_t>();
}

// ---------------------------------------------------------------------------
// connected_components: 8-connected labeling in raster discovery order; one
// bounding box per component, components below min_area discarded.
// ---------------------------------------------------------------------------

inline FrameBoxes connected_components(const Mask& mask, int min_area, int t = 0) {
    const int h = static_cast<int>(mask.rows());
    const int w = static_cast<int>(mask.cols());
    FrameBoxes out;
    out.t = t;
    Image<std::uint8_t> seen = Image<std::uint8_t>::Zero(h, w);
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask(y, x) || seen(y, x)) continue;
            Box b{x, y, x, y, 0.0, 0.0, 0};
            double sx = 0.0, sy = 0.0;
            stack.clear();
            stack.emplace_back(y, x);
            seen(y, x) = 1;
            while (!stack.empty()) {
                const auto [cy, cx] = stack.back();
                stack.pop_back();
                ++b.area;
                sx += cx;
                sy += cy;
                b.x_min = std::min(b.x_min, cx);
                b.x_max = std::max(b.x_max, cx);
                b.y_min = std::min(b.y_min, cy);
                b.y_max = std::max(b.y_max, cy);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        if (!mask(ny, nx) || seen(ny, nx)) continue;
                        seen(ny, nx) = 1;
                        stack.emplace_back(ny, nx);
                    }
                }
            }
            if (b.area >= min_area && b.area > 0) {
                b.cx = sx / b.area;
                b.cy = sy / b.area;
                out.boxes.push_back(b);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// link_boxes: greedy one-to-one association between consecutive frames by
// ascending centroid distance; unmatched boxes start new tracks, unmatched
// tracks end. Ties broken by (prev index, next index) for determinism.
// ---------------------------------------------------------------------------

inline std::vector<CandidateTrack> link_boxes(const std::vector<FrameBoxes>& per_frame,
                                              double tau_link) {
    std::vector<CandidateTrack> tracks;
    std::vector<int> active;  // track index per box of the previous frame
    int prev_t = std::numeric_limits<int>::min();
    const FrameBoxes* prev = nullptr;

    for (const auto& fb : per_frame) {
        std::vector<int> cur_track(fb.boxes.size(), -1);
        if (prev != nullptr && fb.t == prev_t + 1) {
            struct Pair {
                double dist;
                int i, j;
            };
            std::vector<Pair> pairs;
            for (int i = 0; i < static_cast<int>(prev->boxes.size()); ++i) {
                for (int j = 0; j < static_cast<int>(fb.boxes.size()); ++j) {
                    const double dx = prev->boxes[i].cx - fb.boxes[j].cx;
                    const double dy = prev->boxes[i].cy - fb.boxes[j].cy;
                    const double dist = std::sqrt(dx * dx + dy * dy);
                    if (dist <= tau_link) pairs.push_back({dist, i, j});
                }
            }
            std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
                return std::tie(a.dist, a.i, a.j) < std::tie(b.dist, b.i, b.j);
            });
            std::vector<std::uint8_t> used_prev(prev->boxes.size(), 0);
            for (const auto& p : pairs) {
                if (used_prev[p.i] || cur_track[p.j] >= 0) continue;
                used_prev[p.i] = 1;
                cur_track[p.j] = active[p.i];
                tracks[static_cast<std::size_t>(active[p.i])].entries.push_back({fb.t, fb.boxes[p.j]});
            }
        }
        for (int j = 0; j < static_cast<int>(fb.boxes.size()); ++j) {
            if (cur_track[j] >= 0) continue;
            CandidateTrack tr;
            tr.id = static_cast<int>(tracks.size());
            tr.entries.push_back({fb.t, fb.boxes[j]});
            cur_track[j] = tr.id;
            tracks.push_back(std::move(tr));
        }
        active = std::move(cur_track);
        prev = &fb;
        prev_t = fb.t;
    }
    return tracks;
}

// ---------------------------------------------------------------------------
// build_candidates: one spatial window fixed on the first frame's centroid,
// temporal windows at offsets 0, slide, 2*slide, ... while offset < track
// length; slices past the track end are zero-padded and flagged.
// ---------------------------------------------------------------------------

template <typename Scalar>
std::vector<CandidateSequence<Scalar>> build_candidates(const CandidateTrack& track,
                                                        const ImageSequence<Scalar>& seq,
                                                        const ExtractConfig& cfg) {
    const int cw = cfg.crop_width, ch = cfg.crop_height, cd = cfg.crop_depth;
    const auto& first = track.entries.front().box;
    const int origin_x = static_cast<int>(std::llround(first.cx)) - cw / 2;
    const int origin_y = static_cast<int>(std::llround(first.cy)) - ch / 2;
    const int len = track.length();

    std::vector<CandidateSequence<Scalar>> out;
    for (int offset = 0; offset < len; offset += cfg.slide) {
        CandidateSequence<Scalar> cand;
        cand.track_id = track.id;
        cand.window_offset = offset;
        cand.volume = Volume3<Scalar>(cw, ch, cd);
        cand.meta.origin_x = origin_x;
        cand.meta.origin_y = origin_y;
        cand.meta.origin_t = track.start_t() + offset;
        cand.meta.pad_mask.assign(static_cast<std::size_t>(cd), 0);
        for (int s = 0; s < cd; ++s) {
            const int track_pos = offset + s;
            if (track_pos >= len) {
                cand.meta.pad_mask[static_cast<std::size_t>(s)] = 1;
                continue;  // volume is zero-initialized
            }
            const int gt = track.start_t() + track_pos;
            const auto& frame = seq.frames[static_cast<std::size_t>(gt)];
            // overlap of the crop window with the frame; outside stays zero
            const int sx = std::max(0, origin_x), sy = std::max(0, origin_y);
            const int ex = std::min(seq.width, origin_x + cw), ey = std::min(seq.height, origin_y + ch);
            if (sx >= ex || sy >= ey) continue;
            cand.volume.slice(s).block(sy - origin_y, sx - origin_x, ey - sy, ex - sx) =
                frame.block(sy, sx, ey - sy, ex - sx);
        }
        out.push_back(std::move(cand));
    }
    return out;
}

/// Per-sequence contrast rescale to [0,1]; constant sequences map to zero.
template <typename Scalar>
ImageSequence<Scalar> normalize_contrast(const ImageSequence<Scalar>& seq) {
    Scalar lo = std::numeric_limits<Scalar>::max();
    Scalar hi = std::numeric_limits<Scalar>::lowest();
    for (const auto& f : seq.frames) {
        lo = std::min(lo, f.minCoeff());
        hi = std::max(hi, f.maxCoeff());
    }
    ImageSequence<Scalar> out;
    out.width = seq.width;
    out.height = seq.height;
    out.metadata = seq.metadata;
    out.frames.reserve(seq.frames.size());
    const Scalar span = hi - lo;
    for (const auto& f : seq.frames) {
        if (span > Scalar(0))
            out.frames.push_back(((f - lo) / span).eval());
        else
            out.frames.push_back(Image<Scalar>::Zero(f.rows(), f.cols()));
    }
    return out;
}

/// Full extraction: filter -> binarize -> components -> link -> windows.
/// Pure in (seq, cfg); per-frame filtering parallelizes deterministically.
template <typename Scalar>
std::vector<CandidateSequence<Scalar>> extract(const ImageSequence<Scalar>& seq,
                                               const ExtractConfig& cfg, int threads = 1) {
    cfg.validate();
    if (seq.num_frames() == 0) return {};
    const ImageSequence<Scalar> prepared = cfg.normalize ? normalize_contrast(seq) : seq;

    std::vector<FrameBoxes> per_frame(static_cast<std::size_t>(prepared.num_frames()));
    parallel_for(prepared.num_frames(), threads, [&](std::int64_t t) {
        const auto filtered = average_filter(prepared.frames[static_cast<std::size_t>(t)], cfg.d);
        const auto mask = binarize(filtered, cfg.theta_bin);
        per_frame[static_cast<std::size_t>(t)] = connected_components(mask, cfg.min_area, static_cast<int>(t));
    });

    std::vector<CandidateSequence<Scalar>> out;
    for (const auto& track : link_boxes(per_frame, cfg.tau_link)) {
        auto cands = build_candidates(track, prepared, cfg);
        for (auto& c : cands) out.push_back(std::move(c));
    }
    return out;
}

}  // namespace mitodet
