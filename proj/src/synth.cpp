#include "mitodet/synth.hpp"

#include "mitodet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

namespace mitodet {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr int kSplitFrames = 6;
constexpr double kSplitSpeed = 1.5;  // px/frame each daughter moves from the center
constexpr int kFadeFrames = 4;
constexpr int kHoldFrames = 4;  // distractor plateau

struct Blob {
    double cx, cy, amp, radius;
};

// margin keeping the full event footprint (3-sigma tail + daughter travel)
// inside the frame
int placement_margin(const SynthConfig& cfg) {
    return static_cast<int>(std::ceil(3.0 * cfg.radius + kSplitSpeed * kSplitFrames)) + 2;
}

int event_tail() { return kSplitFrames + kFadeFrames; }

struct Site {
    double x, y;
};

bool far_enough(const std::vector<Site>& sites, double x, double y, double min_sep) {
    for (const auto& s : sites) {
        const double dx = x - s.x, dy = y - s.y;
        if (dx * dx + dy * dy < min_sep * min_sep) return false;
    }
    return true;
}

void add_blob(ImageF& frame, const Blob& b) {
    const int w = static_cast<int>(frame.cols());
    const int h = static_cast<int>(frame.rows());
    const int reach = static_cast<int>(std::ceil(3.0 * b.radius));
    const int x0 = std::max(0, static_cast<int>(std::floor(b.cx)) - reach);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(b.cx)) + reach);
    const int y0 = std::max(0, static_cast<int>(std::floor(b.cy)) - reach);
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(b.cy)) + reach);
    const double inv = 1.0 / (2.0 * b.radius * b.radius);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - b.cx, dy = y - b.cy;
            frame(y, x) += static_cast<float>(b.amp * std::exp(-(dx * dx + dy * dy) * inv));
        }
    }
}

// static bilinear value noise on a 16 px lattice
ImageF make_background(int w, int h, double amplitude, Rng& rng) {
    const int cell = 16;
    const int gw = w / cell + 2, gh = h / cell + 2;
    ImageD grid(gh, gw);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) grid(gy, gx) = uniform01(rng);
    ImageF bg(h, w);
    for (int y = 0; y < h; ++y) {
        const double fy = static_cast<double>(y) / cell;
        const int gy = static_cast<int>(fy);
        const double wy = fy - gy;
        for (int x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const int gx = static_cast<int>(fx);
            const double wx = fx - gx;
            const double v = grid(gy, gx) * (1 - wx) * (1 - wy) + grid(gy, gx + 1) * wx * (1 - wy) +
                             grid(gy + 1, gx) * (1 - wx) * wy + grid(gy + 1, gx + 1) * wx * wy;
            bg(y, x) = static_cast<float>(amplitude * v);
        }
    }
    return bg;
}

}  // namespace

void SynthConfig::validate() const {
    if (width < 32 || height < 32) throw ConfigError("synth.size must be at least 32x32");
    if (frames < 1) throw ConfigError("synth.frames must be >= 1");
    if (n_events < 0 || n_distractors < 0 || n_close_pairs < 0)
        throw ConfigError("synth counts must be >= 0");
    if (2 * n_close_pairs > n_events)
        throw ConfigError("synth.n_close_pairs needs two events per pair");
    if (!(peak > 0.0 && peak <= 1.0)) throw ConfigError("synth.peak must lie in (0,1]");
    if (!(radius > 0.0)) throw ConfigError("synth.radius must be > 0");
    if (ramp < 1) throw ConfigError("synth.ramp must be >= 1");
    if (bg_amplitude < 0.0 || bg_amplitude > 0.3)
        throw ConfigError("synth.bg_amplitude must lie in [0, 0.3]");
    if (!(min_separation > 0.0)) throw ConfigError("synth.min_separation must be > 0");
    const int margin = placement_margin(*this);
    if (width - 2 * margin < 1 || height - 2 * margin < 1)
        throw ConfigError("synth.size too small for the event footprint");
    if ((n_events > 0 || n_distractors > 0) && frames < ramp + event_tail() + 2)
        throw ConfigError("synth.frames too short for the event profile (need >= " +
                          std::to_string(ramp + event_tail() + 2) + ")");
}

SynthResult generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    SynthResult res;
    res.seq.width = cfg.width;
    res.seq.height = cfg.height;
    res.seq.metadata["generator"] = "synth";
    res.seq.metadata["seed"] = std::to_string(cfg.seed);

    const ImageF bg = make_background(cfg.width, cfg.height, cfg.bg_amplitude, rng);

    const int margin = placement_margin(cfg);
    const int t_lo = cfg.ramp;
    const int t_hi = cfg.frames - event_tail() - 2;

    struct Event {
        int x, y, t;
        double angle;
    };
    struct Distractor {
        int x, y, t0;
    };
    std::vector<Site> sites;
    std::vector<Event> events;
    std::vector<Distractor> distractors;

    auto place = [&](double close_to_x, double close_to_y, bool paired) -> Site {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            double x, y;
            if (paired) {
                const double dist = uniform(rng, cfg.min_separation + 4.0,
                                            std::max(cfg.min_separation + 8.0, 46.0));
                const double ang = uniform(rng, 0.0, kTwoPi);
                x = close_to_x + dist * std::cos(ang);
                y = close_to_y + dist * std::sin(ang);
                if (x < margin || x >= cfg.width - margin || y < margin || y >= cfg.height - margin)
                    continue;
            } else {
                x = uniform(rng, margin, cfg.width - margin);
                y = uniform(rng, margin, cfg.height - margin);
            }
            x = std::floor(x);
            y = std::floor(y);
            if (!far_enough(sites, x, y, cfg.min_separation)) continue;
            sites.push_back({x, y});
            return {x, y};
        }
        throw ConfigError("synth: could not place blobs with the required separation; "
                          "reduce counts or min_separation, or enlarge the frame");
    };
    auto draw_t = [&]() { return static_cast<int>(t_lo + uniform_int(rng, 0, t_hi - t_lo)); };

    for (int p = 0; p < cfg.n_close_pairs; ++p) {
        const Site a = place(0, 0, false);
        const int ta = draw_t();
        const Site b = place(a.x, a.y, true);
        int tb = ta + 2 + static_cast<int>(uniform_int(rng, 0, 3));
        tb = std::min(tb, t_hi);
        const double ang_a = uniform(rng, 0.0, kTwoPi);
        const double ang_b = uniform(rng, 0.0, kTwoPi);
        events.push_back({static_cast<int>(a.x), static_cast<int>(a.y), ta, ang_a});
        events.push_back({static_cast<int>(b.x), static_cast<int>(b.y), tb, ang_b});
    }
    for (int k = 2 * cfg.n_close_pairs; k < cfg.n_events; ++k) {
        const Site s = place(0, 0, false);
        events.push_back({static_cast<int>(s.x), static_cast<int>(s.y), draw_t(),
                          uniform(rng, 0.0, kTwoPi)});
    }
    for (int k = 0; k < cfg.n_distractors; ++k) {
        const Site s = place(0, 0, false);
        const int span = 2 * cfg.ramp + kHoldFrames;
        const int t0 = static_cast<int>(uniform_int(rng, 0, std::max(0, cfg.frames - span - 1)));
        distractors.push_back({static_cast<int>(s.x), static_cast<int>(s.y), t0});
    }

    for (int t = 0; t < cfg.frames; ++t) {
        ImageF frame = bg;
        for (const auto& ev : events) {
            const int rel = t - ev.t;
            if (rel < -cfg.ramp || rel > event_tail()) continue;
            if (rel < 0) {
                // brightening mother cell
                const double w = static_cast<double>(cfg.ramp + rel + 1) / (cfg.ramp + 1);
                add_blob(frame, {static_cast<double>(ev.x), static_cast<double>(ev.y),
                                 cfg.peak * w, cfg.radius * (0.6 + 0.4 * w)});
            } else if (rel == 0) {
                add_blob(frame, {static_cast<double>(ev.x), static_cast<double>(ev.y), cfg.peak,
                                 cfg.radius});
            } else {
                // two daughters drifting apart, dimming
                double amp = 0.65 * cfg.peak * (1.0 - 0.5 * std::min(rel, kSplitFrames) / kSplitFrames);
                if (rel > kSplitFrames)
                    amp *= 1.0 - static_cast<double>(rel - kSplitFrames) / (kFadeFrames + 1);
                const double off = kSplitSpeed * std::min(rel, kSplitFrames + kFadeFrames);
                const double ox = off * std::cos(ev.angle), oy = off * std::sin(ev.angle);
                add_blob(frame, {ev.x + ox, ev.y + oy, amp, cfg.radius * 0.8});
                add_blob(frame, {ev.x - ox, ev.y - oy, amp, cfg.radius * 0.8});
            }
        }
        for (const auto& dis : distractors) {
            const int rel = t - dis.t0;
            const int span = 2 * cfg.ramp + kHoldFrames;
            if (rel < 0 || rel > span) continue;
            double w;
            if (rel < cfg.ramp)
                w = static_cast<double>(rel + 1) / (cfg.ramp + 1);
            else if (rel < cfg.ramp + kHoldFrames)
                w = 1.0;
            else
                w = static_cast<double>(span - rel) / (cfg.ramp + 1);
            add_blob(frame, {static_cast<double>(dis.x), static_cast<double>(dis.y),
                             0.8 * cfg.peak * w, cfg.radius});
        }
        frame = frame.min(1.0f).max(0.0f);
        res.seq.frames.push_back(std::move(frame));
    }

    for (const auto& ev : events) {
        Annotation a;
        a.point = {static_cast<double>(ev.x), static_cast<double>(ev.y), static_cast<double>(ev.t)};
        res.annotations.push_back(a);
    }
    std::sort(res.annotations.begin(), res.annotations.end(), [](const Annotation& a, const Annotation& b) {
        return std::make_tuple(a.point.t, a.point.y, a.point.x) <
               std::make_tuple(b.point.t, b.point.y, b.point.x);
    });
    for (std::size_t i = 0; i < res.annotations.size(); ++i)
        res.annotations[i].id = static_cast<int>(i);
    return res;
}

}  // namespace mitodet
