#include "mitodet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <vector>

namespace mitodet {

namespace {

// Unit-capacity min-cost max-flow (successive shortest paths); small graphs
// only. Augmenting by cheapest paths makes the final matching the minimum
// total-distance one among all maximum-cardinality matchings.
struct Mcmf {
    struct Edge {
        int to;
        int cap;
        double cost;
    };
    std::vector<Edge> edges;
    std::vector<std::vector<int>> adj;

    explicit Mcmf(int n) : adj(static_cast<std::size_t>(n)) {}

    void add(int u, int v, double cost) {
        adj[static_cast<std::size_t>(u)].push_back(static_cast<int>(edges.size()));
        edges.push_back({v, 1, cost});
        adj[static_cast<std::size_t>(v)].push_back(static_cast<int>(edges.size()));
        edges.push_back({u, 0, -cost});
    }

    void run(int s, int t) {
        const double inf = 1e18;
        for (;;) {
            std::vector<double> dist(adj.size(), inf);
            std::vector<int> pedge(adj.size(), -1);
            std::vector<char> inq(adj.size(), 0);
            std::deque<int> q;
            dist[static_cast<std::size_t>(s)] = 0;
            q.push_back(s);
            while (!q.empty()) {
                const int u = q.front();
                q.pop_front();
                inq[static_cast<std::size_t>(u)] = 0;
                for (int ei : adj[static_cast<std::size_t>(u)]) {
                    const Edge& e = edges[static_cast<std::size_t>(ei)];
                    if (e.cap <= 0) continue;
                    const double nd = dist[static_cast<std::size_t>(u)] + e.cost;
                    if (nd < dist[static_cast<std::size_t>(e.to)] - 1e-12) {
                        dist[static_cast<std::size_t>(e.to)] = nd;
                        pedge[static_cast<std::size_t>(e.to)] = ei;
                        if (!inq[static_cast<std::size_t>(e.to)]) {
                            inq[static_cast<std::size_t>(e.to)] = 1;
                            q.push_back(e.to);
                        }
                    }
                }
            }
            if (pedge[static_cast<std::size_t>(t)] < 0) break;
            for (int v = t; v != s;) {
                const int ei = pedge[static_cast<std::size_t>(v)];
                edges[static_cast<std::size_t>(ei)].cap -= 1;
                edges[static_cast<std::size_t>(ei ^ 1)].cap += 1;
                v = edges[static_cast<std::size_t>(ei ^ 1)].to;
            }
        }
    }
};

double spatial_distance(const Point3& a, const Point3& b, bool chebyshev) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return chebyshev ? std::max(std::abs(dx), std::abs(dy)) : std::hypot(dx, dy);
}

bool feasible(const Detection& d, const Annotation& g, double tau_t, double tau_s, bool chebyshev) {
    if (std::abs(d.point.t - g.point.t) > tau_t) return false;
    const double dx = d.point.x - g.point.x, dy = d.point.y - g.point.y;
    if (chebyshev) return std::max(std::abs(dx), std::abs(dy)) <= tau_s;
    return dx * dx + dy * dy <= tau_s * tau_s;
}

}  // namespace

MatchResult match(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                  double tau_t, double tau_s, bool chebyshev) {
    if (tau_t < 0 || tau_s < 0) throw ConfigError("eval tolerances must be >= 0");
    const int nd = static_cast<int>(dets.size());
    const int ng = static_cast<int>(gts.size());
    MatchResult res;

    const int src = 0, snk = nd + ng + 1;
    Mcmf net(nd + ng + 2);
    for (int i = 0; i < nd; ++i) net.add(src, 1 + i, 0.0);
    std::vector<std::vector<int>> det_edges(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        for (int j = 0; j < ng; ++j) {
            if (!feasible(dets[static_cast<std::size_t>(i)], gts[static_cast<std::size_t>(j)], tau_t,
                          tau_s, chebyshev))
                continue;
            det_edges[static_cast<std::size_t>(i)].push_back(static_cast<int>(net.edges.size()));
            net.add(1 + i, 1 + nd + j,
                    spatial_distance(dets[static_cast<std::size_t>(i)].point,
                                     gts[static_cast<std::size_t>(j)].point, chebyshev));
        }
    }
    for (int j = 0; j < ng; ++j) net.add(1 + nd + j, snk, 0.0);
    net.run(src, snk);

    for (int i = 0; i < nd; ++i) {
        for (int ei : det_edges[static_cast<std::size_t>(i)]) {
            if (net.edges[static_cast<std::size_t>(ei)].cap != 0) continue;
            const int j = net.edges[static_cast<std::size_t>(ei)].to - 1 - nd;
            MatchPair p;
            p.det = i;
            p.gt = j;
            p.dist_spatial = spatial_distance(dets[static_cast<std::size_t>(i)].point,
                                              gts[static_cast<std::size_t>(j)].point, chebyshev);
            p.dt = dets[static_cast<std::size_t>(i)].point.t - gts[static_cast<std::size_t>(j)].point.t;
            res.pairs.push_back(p);
            break;
        }
    }
    res.tp = static_cast<int>(res.pairs.size());
    res.fp = nd - res.tp;
    res.fn = ng - res.tp;
    return res;
}

Prf prf(int tp, int fp, int fn) {
    Prf r;
    if (tp + fp > 0) r.precision = static_cast<double>(tp) / (tp + fp);
    if (tp + fn > 0) r.recall = static_cast<double>(tp) / (tp + fn);
    if (r.precision + r.recall > 0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

std::vector<SweepPoint> sweep(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                              SweepAxis axis, const std::vector<double>& thresholds, bool chebyshev) {
    std::vector<SweepPoint> out;
    for (double v : thresholds) {
        const double tau_t = (axis == SweepAxis::Temporal) ? v : 6.0;
        const double tau_s = (axis == SweepAxis::Spatial) ? v : 15.0;
        const MatchResult m = match(dets, gts, tau_t, tau_s, chebyshev);
        const Prf p = prf(m);
        out.push_back({v, m.tp, m.fp, m.fn, p.precision, p.recall, p.f1});
    }
    return out;
}

void write_sweep_svg(const std::string& path, SweepAxis axis, const std::vector<SweepPoint>& points) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");

    const double W = 640, H = 400, ml = 60, mr = 20, mt = 20, mb = 50;
    const double pw = W - ml - mr, ph = H - mt - mb;
    double lo = 0, hi = 1;
    if (!points.empty()) {
        lo = hi = points.front().threshold;
        for (const auto& p : points) {
            lo = std::min(lo, p.threshold);
            hi = std::max(hi, p.threshold);
        }
    }
    const double span = (hi > lo) ? (hi - lo) : 1.0;
    auto px = [&](double v) { return ml + (v - lo) / span * pw; };
    auto py = [&](double v) { return mt + (1.0 - v) * ph; };
    auto fmt = [](double v) {
        char b[32];
        std::snprintf(b, sizeof(b), "%.2f", v);
        return std::string(b);
    };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = py(i * 0.25);
        os << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(ml + pw)
           << "\" y2=\"" << fmt(y) << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << fmt(ml - 8) << "\" y=\"" << fmt(y + 4)
           << "\" text-anchor=\"end\" font-size=\"12\">" << fmt(i * 0.25) << "</text>\n";
    }
    for (const auto& p : points) {
        const double x = px(p.threshold);
        os << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(mt + ph) << "\" x2=\"" << fmt(x)
           << "\" y2=\"" << fmt(mt + ph + 5) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(mt + ph + 20)
           << "\" text-anchor=\"middle\" font-size=\"12\">" << fmt(p.threshold) << "</text>\n";
    }
    os << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(ml) << "\" y2=\""
       << fmt(mt + ph) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(mt + ph) << "\" x2=\"" << fmt(ml + pw)
       << "\" y2=\"" << fmt(mt + ph) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt(ml + pw / 2) << "\" y=\"" << fmt(H - 10)
       << "\" text-anchor=\"middle\" font-size=\"13\">"
       << (axis == SweepAxis::Temporal ? "temporal threshold (frames)" : "spatial threshold (px)")
       << "</text>\n";

    const char* colors[3] = {"#1f77b4", "#ff7f0e", "#2ca02c"};
    const char* names[3] = {"precision", "recall", "f1"};
    for (int s = 0; s < 3; ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << colors[s] << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : points) {
            const double v = (s == 0) ? p.precision : (s == 1) ? p.recall : p.f1;
            os << fmt(px(p.threshold)) << ',' << fmt(py(v)) << ' ';
        }
        os << "\"/>\n";
        for (const auto& p : points) {
            const double v = (s == 0) ? p.precision : (s == 1) ? p.recall : p.f1;
            os << "<circle cx=\"" << fmt(px(p.threshold)) << "\" cy=\"" << fmt(py(v))
               << "\" r=\"3\" fill=\"" << colors[s] << "\"/>\n";
        }
        os << "<text x=\"" << fmt(ml + pw - 90) << "\" y=\"" << fmt(mt + 16 + s * 16)
           << "\" font-size=\"12\" fill=\"" << colors[s] << "\">" << names[s] << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace mitodet
