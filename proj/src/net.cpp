#include "mitodet/net.hpp"

namespace mitodet {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv3d: return "conv3d";
        case LayerKind::Down2: return "down2";
        case LayerKind::Up2: return "up2";
        case LayerKind::PReLU: return "prelu";
        case LayerKind::Sigmoid: return "sigmoid";
        case LayerKind::SkipAdd: return "skip-add";
    }
    return "unknown";
}

int Architecture::output_channels() const {
    int ch = input_channels;
    for (const auto& l : layers)
        if (l.has_weights()) ch = l.out_ch;
    return ch;
}

void Architecture::validate() const {
    if (layers.empty()) throw ShapeError("architecture has no layers");
    int ch = input_channels;
    std::vector<int> out_ch(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        switch (l.kind) {
            case LayerKind::Conv3d:
            case LayerKind::Down2:
            case LayerKind::Up2:
                if (l.in_ch != ch)
                    throw ShapeError("layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) +
                                     "): expects " + std::to_string(l.in_ch) + " channels, gets " +
                                     std::to_string(ch));
                if (l.kernel <= 0 || l.stride <= 0 || l.pad < 0 || l.out_ch <= 0)
                    throw ShapeError("layer " + std::to_string(i) + ": bad kernel/stride/pad");
                ch = l.out_ch;
                break;
            case LayerKind::PReLU:
            case LayerKind::Sigmoid:
                break;
            case LayerKind::SkipAdd: {
                const int s = l.skip_src;
                if (s < 0 || s >= static_cast<int>(i))
                    throw ShapeError("layer " + std::to_string(i) + ": skip source out of range");
                if (out_ch[static_cast<std::size_t>(s)] != ch)
                    throw ShapeError("layer " + std::to_string(i) + ": skip source channel mismatch");
                break;
            }
        }
        out_ch[i] = ch;
    }
}

Architecture vnet_lite(int levels, int base_channels, int in_channels, int out_channels) {
    if (levels < 1) throw ConfigError("vnet_lite: levels must be >= 1");
    if (base_channels < 1) throw ConfigError("vnet_lite: base_channels must be >= 1");
    Architecture arch;
    arch.input_channels = in_channels;
    auto& L = arch.layers;
    auto chan = [&](int level) { return base_channels << level; };
    auto conv = [](int ic, int oc) { return LayerSpec{LayerKind::Conv3d, ic, oc, 3, 1, 1, -1}; };
    auto act = [](int c) { return LayerSpec{LayerKind::PReLU, c, c, 0, 1, 0, -1}; };

    std::vector<int> skip_at(static_cast<std::size_t>(levels), -1);
    L.push_back(conv(in_channels, chan(0)));
    L.push_back(act(chan(0)));
    skip_at[0] = static_cast<int>(L.size()) - 1;
    for (int l = 1; l < levels; ++l) {
        L.push_back(LayerSpec{LayerKind::Down2, chan(l - 1), chan(l), 2, 2, 0, -1});
        L.push_back(act(chan(l)));
        L.push_back(conv(chan(l), chan(l)));
        L.push_back(act(chan(l)));
        skip_at[static_cast<std::size_t>(l)] = static_cast<int>(L.size()) - 1;
    }
    for (int l = levels - 1; l >= 1; --l) {
        L.push_back(LayerSpec{LayerKind::Up2, chan(l), chan(l - 1), 2, 2, 0, -1});
        L.push_back(act(chan(l - 1)));
        L.push_back(LayerSpec{LayerKind::SkipAdd, chan(l - 1), chan(l - 1), 0, 1, 0,
                              skip_at[static_cast<std::size_t>(l - 1)]});
    }
    L.push_back(conv(chan(0), out_channels));
    L.push_back(LayerSpec{LayerKind::Sigmoid, out_channels, out_channels, 0, 1, 0, -1});
    arch.validate();
    return arch;
}

GradCheckReport grad_check(const Architecture& arch, int w, int h, int d, std::uint64_t seed,
                           double eps, bool check_input, int threads) {
    arch.validate();
    const ParamLayout lay = param_layout(arch);

    Rng rng(seed);
    Tensor4<double> input(arch.input_channels, w, h, d);
    for (Eigen::Index i = 0; i < input.data.size(); ++i) input.data[i] = uniform(rng, -1.0, 1.0);
    FlatArray<double> params = init_params<double>(arch, seed + 1);

    Workspace<double> ws;
    Tensor4<double> out = forward(arch, params, input, ws, threads);
    Tensor4<double> probe = out;
    for (Eigen::Index i = 0; i < probe.data.size(); ++i) probe.data[i] = uniform(rng, -1.0, 1.0);

    Gradients<double> g = backward(arch, params, ws, probe, threads);

    // Indices of layers whose output is piecewise in its input: the finite
    // difference is only valid while no pre-activation changes sign between
    // the +h and -h evaluations, so the step shrinks until both sides agree.
    std::vector<std::size_t> kinked;
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].kind == LayerKind::PReLU) kinked.push_back(i);

    Workspace<double> wp, wm;
    auto loss_at = [&](const FlatArray<double>& p, const Tensor4<double>& in, Workspace<double>& w) {
        return (forward(arch, p, in, w, threads).data * probe.data).sum();
    };
    auto same_pieces = [&] {
        for (std::size_t i : kinked) {
            const auto& a = (i == 0) ? wp.input.data : wp.outputs[i - 1].data;
            const auto& b = (i == 0) ? wm.input.data : wm.outputs[i - 1].data;
            if (((a >= 0.0) != (b >= 0.0)).any()) return false;
        }
        return true;
    };
    auto rel_err = [](double a, double f) {
        return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-3});
    };
    auto fd = [&](FlatArray<double>& p, Tensor4<double>& in, double& slot, double analytic) {
        const double v0 = slot;
        double h = eps * std::max(1.0, std::abs(v0));
        double est = 0.0;
        for (int attempt = 0; attempt < 16; ++attempt) {
            slot = v0 + h;
            const double jp = loss_at(p, in, wp);
            slot = v0 - h;
            const double jm = loss_at(p, in, wm);
            slot = v0;
            est = (jp - jm) / (2 * h);
            if (same_pieces()) break;
            h *= 0.25;
        }
        return rel_err(analytic, est);
    };

    GradCheckReport rep;
    FlatArray<double> p = params;
    Tensor4<double> in = input;
    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        GradCheckReport::LayerErr le;
        le.name = layer_kind_name(arch.layers[li].kind);
        le.params = arch.layers[li].param_count();
        const Eigen::Index base = lay.entries[li].weights;
        for (Eigen::Index k = 0; k < le.params; ++k)
            le.max_rel_err = std::max(le.max_rel_err, fd(p, in, p[base + k], g.params[base + k]));
        rep.max_rel_err = std::max(rep.max_rel_err, le.max_rel_err);
        rep.layers.push_back(le);
    }
    if (check_input) {
        for (Eigen::Index i = 0; i < in.data.size(); ++i)
            rep.input_max_rel_err = std::max(rep.input_max_rel_err, fd(p, in, in.data[i], g.input.data[i]));
        rep.max_rel_err = std::max(rep.max_rel_err, rep.input_max_rel_err);
    }
    return rep;
}

}  // namespace mitodet
