#pragma once

#include "mitodet/core.hpp"
#include "mitodet/parallel.hpp"
#include "mitodet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// A small 3D fully-convolutional encoder-decoder estimating a likelihood
// volume the same shape as its input. Forward and backward passes are written
// directly as shifted row operations (axpy / dot over the x axis), which Eigen
// vectorizes; parallel loops partition output ownership so any thread count
// produces bit-identical results.
// ---------------------------------------------------------------------------

enum class LayerKind : std::int32_t {
    Conv3d = 0,   // k x k x k convolution, configurable stride/pad
    Down2 = 1,    // strided 2x2x2 convolution, halves each axis
    Up2 = 2,      // transposed 2x2x2 convolution, doubles each axis
    PReLU = 3,    // learnable single-slope leaky rectifier
    Sigmoid = 4,  // bounds the output to (0,1)
    SkipAdd = 5,  // adds the output of an earlier layer
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::Conv3d;
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    int skip_src = -1;  // SkipAdd: index of the layer whose output is added

    Eigen::Index weight_count() const {
        switch (kind) {
            case LayerKind::Conv3d:
            case LayerKind::Down2:
            case LayerKind::Up2:
                return static_cast<Eigen::Index>(in_ch) * out_ch * kernel * kernel * kernel;
            case LayerKind::PReLU:
                return 1;  // the slope
            default:
                return 0;
        }
    }
    Eigen::Index bias_count() const {
        switch (kind) {
            case LayerKind::Conv3d:
            case LayerKind::Down2:
            case LayerKind::Up2:
                return out_ch;
            default:
                return 0;
        }
    }
    Eigen::Index param_count() const { return weight_count() + bias_count(); }
    bool has_weights() const { return kind == LayerKind::Conv3d || kind == LayerKind::Down2 || kind == LayerKind::Up2; }
};

struct Architecture {
    int input_channels = 1;
    std::vector<LayerSpec> layers;

    Eigen::Index param_count() const {
        Eigen::Index n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }

    /// Each input axis must be divisible by this (product of Down2 strides).
    int required_divisor() const {
        int div = 1;
        for (const auto& l : layers)
            if (l.kind == LayerKind::Down2) div *= l.stride;
        return div;
    }

    int output_channels() const;
    void validate() const;
};

/// V-Net-style default: per-level 3x3x3 convs with PReLU, strided 2x2x2
/// down/up-sampling between levels, additive skips, sigmoid head.
/// levels=2, base=8 gives the channel path 1 -> 8 -> 16 -> 8 -> 1.
Architecture vnet_lite(int levels = 2, int base_channels = 8, int in_channels = 1,
                       int out_channels = 1);

// ---------------------------------------------------------------------------
// Channel-major dense activation tensor; within a channel the layout matches
// Volume3 (x fastest, then y, then t).
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Tensor4 {
    int ch = 0, width = 0, height = 0, depth = 0;
    FlatArray<Scalar> data;

    Tensor4() = default;
    Tensor4(int c, int w, int h, int d) : ch(c), width(w), height(h), depth(d) {
        data = FlatArray<Scalar>::Zero(static_cast<Eigen::Index>(c) * w * h * d);
    }

    Eigen::Index index(int c, int x, int y, int t) const {
        return x + static_cast<Eigen::Index>(width) *
                       (y + static_cast<Eigen::Index>(height) * (t + static_cast<Eigen::Index>(depth) * c));
    }
    Scalar* row_ptr(int c, int t, int y) { return data.data() + index(c, 0, y, t); }
    const Scalar* row_ptr(int c, int t, int y) const { return data.data() + index(c, 0, y, t); }

    Eigen::Map<FlatArray<Scalar>> row(int c, int t, int y) { return {row_ptr(c, t, y), width}; }
    Eigen::Map<const FlatArray<Scalar>> row(int c, int t, int y) const {
        return {row_ptr(c, t, y), width};
    }

    bool same_shape(const Tensor4& o) const {
        return ch == o.ch && width == o.width && height == o.height && depth == o.depth;
    }
};

template <typename Scalar>
Tensor4<Scalar> tensor_from_volume(const Volume3<Scalar>& v) {
    Tensor4<Scalar> t(1, v.width, v.height, v.depth);
    t.data = v.data;
    return t;
}

template <typename Scalar>
Volume3<Scalar> volume_from_tensor(const Tensor4<Scalar>& t) {
    if (t.ch != 1) throw ShapeError("volume_from_tensor: tensor must have one channel");
    Volume3<Scalar> v(t.width, t.height, t.depth);
    v.data = t.data;
    return v;
}

// ---------------------------------------------------------------------------
// Parameter block layout: per layer [weights..., biases...] in layer order.
// ---------------------------------------------------------------------------

struct ParamLayout {
    struct Entry {
        Eigen::Index weights = 0;  // offset of the weight block
        Eigen::Index biases = 0;   // offset of the bias block
        Eigen::Index wcount = 0;
        Eigen::Index bcount = 0;
    };
    std::vector<Entry> entries;
    Eigen::Index total = 0;
};

inline ParamLayout param_layout(const Architecture& arch) {
    ParamLayout lay;
    Eigen::Index off = 0;
    for (const auto& l : arch.layers) {
        ParamLayout::Entry e;
        e.wcount = l.weight_count();
        e.bcount = l.bias_count();
        e.weights = off;
        e.biases = off + e.wcount;
        off += e.wcount + e.bcount;
        lay.entries.push_back(e);
    }
    lay.total = off;
    return lay;
}

/// Fan-in scaled init: weights ~ N(0, 2/fan_in) with fan_in = in_ch * k^3,
/// zero biases, PReLU slopes 0.25. Deterministic per seed.
template <typename Scalar>
FlatArray<Scalar> init_params(const Architecture& arch, std::uint64_t seed) {
    const ParamLayout lay = param_layout(arch);
    FlatArray<Scalar> p = FlatArray<Scalar>::Zero(lay.total);
    Rng rng(seed);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        const auto& e = lay.entries[i];
        if (l.has_weights()) {
            const double fan_in = static_cast<double>(l.in_ch) * l.kernel * l.kernel * l.kernel;
            const double stddev = std::sqrt(2.0 / fan_in);
            for (Eigen::Index k = 0; k < e.wcount; ++k)
                p[e.weights + k] = static_cast<Scalar>(stddev * normal(rng));
        } else if (l.kind == LayerKind::PReLU) {
            p[e.weights] = static_cast<Scalar>(0.25);
        }
    }
    return p;
}

namespace detail {

inline int ceil_div_nonneg(int a, int b) { return a > 0 ? (a + b - 1) / b : 0; }

template <typename Scalar>
using ConstStrided =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<Eigen::Dynamic>>;
template <typename Scalar>
using Strided = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<Eigen::Dynamic>>;
template <typename Scalar>
using ConstRowVec = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using RowVec = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

// out[oc,oz,oy,ox] = b[oc] + sum_{ic,k} w[oc,ic,kz,ky,kx] * in[ic, S*oz+kz-P, S*oy+ky-P, S*ox+kx-P]
// weight layout: (((oc*IC + ic)*K + kz)*K + ky)*K + kx
template <typename Scalar>
void conv3d_forward(const Tensor4<Scalar>& in, const Scalar* w, const Scalar* b,
                    const LayerSpec& spec, Tensor4<Scalar>& out, int threads) {
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int IC = in.ch, IW = in.width, IH = in.height, ID = in.depth;
    const int OC = out.ch, OW = out.width, OH = out.height, OD = out.depth;
    parallel_for(static_cast<std::int64_t>(OC) * OD, threads, [&](std::int64_t idx) {
        const int oc = static_cast<int>(idx / OD);
        const int oz = static_cast<int>(idx % OD);
        for (int oy = 0; oy < OH; ++oy) out.row(oc, oz, oy).setConstant(b[oc]);
        for (int ic = 0; ic < IC; ++ic) {
            for (int kz = 0; kz < K; ++kz) {
                const int iz = S * oz + kz - P;
                if (iz < 0 || iz >= ID) continue;
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const Scalar wv = w[((static_cast<Eigen::Index>(oc) * IC + ic) * K + kz) * K * K +
                                            ky * K + kx];
                        const int ox_lo = ceil_div_nonneg(P - kx, S);
                        const int hi_num = IW - 1 - kx + P;
                        if (hi_num < 0) continue;
                        const int ox_hi = std::min(OW - 1, hi_num / S);
                        const int n = ox_hi - ox_lo + 1;
                        if (n <= 0) continue;
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = S * oy + ky - P;
                            if (iy < 0 || iy >= IH) continue;
                            auto dst = RowVec<Scalar>(out.row_ptr(oc, oz, oy) + ox_lo, n);
                            if (S == 1) {
                                dst += wv * ConstRowVec<Scalar>(in.row_ptr(ic, iz, iy) + ox_lo + kx - P, n);
                            } else {
                                dst += wv * ConstStrided<Scalar>(in.row_ptr(ic, iz, iy) + S * ox_lo + kx - P,
                                                                 n, Eigen::InnerStride<>(S));
                            }
                        }
                    }
                }
            }
        }
    });
}

// din[ic,iz,iy,ix] += sum w[oc,ic,k] * dout[oc,oz,oy,ox]; gather per (ic,iz) slab.
template <typename Scalar>
void conv3d_backward_input(const Tensor4<Scalar>& dout, const Scalar* w, const LayerSpec& spec,
                           Tensor4<Scalar>& din, int threads) {
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int IC = din.ch, IW = din.width, IH = din.height, ID = din.depth;
    const int OC = dout.ch, OW = dout.width, OH = dout.height, OD = dout.depth;
    parallel_for(static_cast<std::int64_t>(IC) * ID, threads, [&](std::int64_t idx) {
        const int ic = static_cast<int>(idx / ID);
        const int iz = static_cast<int>(idx % ID);
        for (int oc = 0; oc < OC; ++oc) {
            for (int kz = 0; kz < K; ++kz) {
                const int tz = iz + P - kz;
                if (tz < 0 || tz % S != 0) continue;
                const int oz = tz / S;
                if (oz >= OD) continue;
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const Scalar wv = w[((static_cast<Eigen::Index>(oc) * IC + ic) * K + kz) * K * K +
                                            ky * K + kx];
                        const int ox_lo = ceil_div_nonneg(P - kx, S);
                        const int hi_num = IW - 1 - kx + P;
                        if (hi_num < 0) continue;
                        const int ox_hi = std::min(OW - 1, hi_num / S);
                        const int n = ox_hi - ox_lo + 1;
                        if (n <= 0) continue;
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = S * oy + ky - P;
                            if (iy < 0 || iy >= IH) continue;
                            auto src = ConstRowVec<Scalar>(dout.row_ptr(oc, oz, oy) + ox_lo, n);
                            if (S == 1) {
                                RowVec<Scalar>(din.row_ptr(ic, iz, iy) + ox_lo + kx - P, n) += wv * src;
                            } else {
                                Strided<Scalar>(din.row_ptr(ic, iz, iy) + S * ox_lo + kx - P, n,
                                                Eigen::InnerStride<>(S)) += wv * src;
                            }
                        }
                    }
                }
            }
        }
    });
}

// dw[oc,ic,k] = sum dout[oc,...] * in[ic,...]; db[oc] = sum dout[oc].
template <typename Scalar>
void conv3d_backward_params(const Tensor4<Scalar>& in, const Tensor4<Scalar>& dout,
                            const LayerSpec& spec, Scalar* dw, Scalar* db, int threads) {
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int IC = in.ch, IW = in.width, IH = in.height, ID = in.depth;
    const int OC = dout.ch, OW = dout.width, OH = dout.height, OD = dout.depth;
    parallel_for(static_cast<std::int64_t>(OC) * IC, threads, [&](std::int64_t idx) {
        const int oc = static_cast<int>(idx / IC);
        const int ic = static_cast<int>(idx % IC);
        for (int kz = 0; kz < K; ++kz) {
            for (int ky = 0; ky < K; ++ky) {
                for (int kx = 0; kx < K; ++kx) {
                    const int ox_lo = ceil_div_nonneg(P - kx, S);
                    const int hi_num = IW - 1 - kx + P;
                    Scalar acc = 0;
                    if (hi_num >= 0) {
                        const int ox_hi = std::min(OW - 1, hi_num / S);
                        const int n = ox_hi - ox_lo + 1;
                        if (n > 0) {
                            for (int oz = 0; oz < OD; ++oz) {
                                const int iz = S * oz + kz - P;
                                if (iz < 0 || iz >= ID) continue;
                                for (int oy = 0; oy < OH; ++oy) {
                                    const int iy = S * oy + ky - P;
                                    if (iy < 0 || iy >= IH) continue;
                                    auto go = ConstRowVec<Scalar>(dout.row_ptr(oc, oz, oy) + ox_lo, n);
                                    if (S == 1) {
                                        acc += go.dot(
                                            ConstRowVec<Scalar>(in.row_ptr(ic, iz, iy) + ox_lo + kx - P, n));
                                    } else {
                                        acc += go.dot(ConstStrided<Scalar>(
                                            in.row_ptr(ic, iz, iy) + S * ox_lo + kx - P, n,
                                            Eigen::InnerStride<>(S)));
                                    }
                                }
                            }
                        }
                    }
                    dw[((static_cast<Eigen::Index>(oc) * IC + ic) * K + kz) * K * K + ky * K + kx] = acc;
                }
            }
        }
        if (ic == 0) {
            Scalar acc = 0;
            for (int oz = 0; oz < OD; ++oz)
                for (int oy = 0; oy < OH; ++oy) acc += dout.row(oc, oz, oy).sum();
            db[oc] = acc;
        }
    });
}

// Transposed convolution; out[oc, S*iz+kz-P, S*iy+ky-P, S*ix+kx-P] += w[ic,oc,k] * in[ic,...]
// weight layout: (((ic*OC + oc)*K + kz)*K + ky)*K + kx. Gather per (oc,oz) slab.
template <typename Scalar>
void convt3d_forward(const Tensor4<Scalar>& in, const Scalar* w, const Scalar* b,
                     const LayerSpec& spec, Tensor4<Scalar>& out, int threads) {
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int IC = in.ch, IW = in.width, IH = in.height, ID = in.depth;
    const int OC = out.ch, OW = out.width, OH = out.height, OD = out.depth;
    parallel_for(static_cast<std::int64_t>(OC) * OD, threads, [&](std::int64_t idx) {
        const int oc = static_cast<int>(idx / OD);
        const int oz = static_cast<int>(idx % OD);
        for (int oy = 0; oy < OH; ++oy) out.row(oc, oz, oy).setConstant(b[oc]);
        for (int ic = 0; ic < IC; ++ic) {
            for (int kz = 0; kz < K; ++kz) {
                const int tz = oz + P - kz;
                if (tz < 0 || tz % S != 0) continue;
                const int iz = tz / S;
                if (iz >= ID) continue;
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const Scalar wv = w[((static_cast<Eigen::Index>(ic) * OC + oc) * K + kz) * K * K +
                                            ky * K + kx];
                        const int ix_lo = ceil_div_nonneg(P - kx, S);
                        const int hi_num = OW - 1 - kx + P;
                        if (hi_num < 0) continue;
                        const int ix_hi = std::min(IW - 1, hi_num / S);
                        const int n = ix_hi - ix_lo + 1;
                        if (n <= 0) continue;
                        for (int oy = 0; oy < OH; ++oy) {
                            const int ty = oy + P - ky;
                            if (ty < 0 || ty % S != 0) continue;
                            const int iy = ty / S;
                            if (iy >= IH) continue;
                            auto src = ConstRowVec<Scalar>(in.row_ptr(ic, iz, iy) + ix_lo, n);
                            Strided<Scalar>(out.row_ptr(oc, oz, oy) + S * ix_lo + kx - P, n,
                                            Eigen::InnerStride<>(S)) += wv * src;
                        }
                    }
                }
            }
        }
    });
}

// din[ic,iz,iy,ix] = sum w[ic,oc,k] * dout[oc, S*iz+kz-P, S*iy+ky-P, S*ix+kx-P]
template <typename Scalar>
void convt3d_backward_input(const Tensor4<Scalar>& dout, const Scalar* w, const LayerSpec& spec,
                            Tensor4<Scalar>& din, int threads) {
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int IC = din.ch, IW = din.width, IH = din.height, ID = din.depth;
    const int OC = dout.ch, OW = dout.width, OH = dout.height, OD = dout.depth;
    parallel_for(static_cast<std::int64_t>(IC) * ID, threads, [&](std::int64_t idx) {
        const int ic = static_cast<int>(idx / ID);
        const int iz = static_cast<int>(idx % ID);
        for (int oc = 0; oc < OC; ++oc) {
            for (int kz = 0; kz < K; ++kz) {
                const int oz = S * iz + kz - P;
                if (oz < 0 || oz >= OD) continue;
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const Scalar wv = w[((static_cast<Eigen::Index>(ic) * OC + oc) * K + kz) * K * K +
                                            ky * K + kx];
                        const int ix_lo = ceil_div_nonneg(P - kx, S);
                        const int hi_num = OW - 1 - kx + P;
                        if (hi_num < 0) continue;
                        const int ix_hi = std::min(IW - 1, hi_num / S);
                        const int n = ix_hi - ix_lo + 1;
                        if (n <= 0) continue;
                        for (int iy = 0; iy < IH; ++iy) {
                            const int oy = S * iy + ky - P;
                            if (oy < 0 || oy >= OH) continue;
                            auto src = ConstStrided<Scalar>(dout.row_ptr(oc, oz, oy) + S * ix_lo + kx - P, n,
                                                            Eigen::InnerStride<>(S));
                            RowVec<Scalar>(din.row_ptr(ic, iz, iy) + ix_lo, n) += wv * src;
                        }
                    }
                }
            }
        }
    });
}

template <typename Scalar>
void convt3d_backward_params(const Tensor4<Scalar>& in, const Tensor4<Scalar>& dout,
                             const LayerSpec& spec, Scalar* dw, Scalar* db, int threads) {
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int IC = in.ch, IW = in.width, IH = in.height, ID = in.depth;
    const int OC = dout.ch, OW = dout.width, OH = dout.height, OD = dout.depth;
    parallel_for(static_cast<std::int64_t>(IC) * OC, threads, [&](std::int64_t idx) {
        const int ic = static_cast<int>(idx / OC);
        const int oc = static_cast<int>(idx % OC);
        for (int kz = 0; kz < K; ++kz) {
            for (int ky = 0; ky < K; ++ky) {
                for (int kx = 0; kx < K; ++kx) {
                    const int ix_lo = ceil_div_nonneg(P - kx, S);
                    const int hi_num = OW - 1 - kx + P;
                    Scalar acc = 0;
                    if (hi_num >= 0) {
                        const int ix_hi = std::min(IW - 1, hi_num / S);
                        const int n = ix_hi - ix_lo + 1;
                        if (n > 0) {
                            for (int iz = 0; iz < ID; ++iz) {
                                const int oz = S * iz + kz - P;
                                if (oz < 0 || oz >= OD) continue;
                                for (int iy = 0; iy < IH; ++iy) {
                                    const int oy = S * iy + ky - P;
                                    if (oy < 0 || oy >= OH) continue;
                                    acc += ConstRowVec<Scalar>(in.row_ptr(ic, iz, iy) + ix_lo, n)
                                               .dot(ConstStrided<Scalar>(
                                                   dout.row_ptr(oc, oz, oy) + S * ix_lo + kx - P, n,
                                                   Eigen::InnerStride<>(S)));
                                }
                            }
                        }
                    }
                    dw[((static_cast<Eigen::Index>(ic) * OC + oc) * K + kz) * K * K + ky * K + kx] = acc;
                }
            }
        }
        if (ic == 0) {
            Scalar acc = 0;
            for (int oz = 0; oz < OD; ++oz)
                for (int oy = 0; oy < OH; ++oy) acc += dout.row(oc, oz, oy).sum();
            db[oc] = acc;
        }
    });
}

template <typename Scalar>
void conv_out_shape(const Tensor4<Scalar>& in, const LayerSpec& spec, int& ow, int& oh, int& od) {
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    auto dim = [&](int i, const char* axis) {
        const int num = i + 2 * P - K;
        if (num < 0 || num % S != 0)
            throw ShapeError(std::string("conv3d: input ") + axis + " dim " + std::to_string(i) +
                             " incompatible with kernel/stride/pad");
        return num / S + 1;
    };
    ow = dim(in.width, "x");
    oh = dim(in.height, "y");
    od = dim(in.depth, "t");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Whole-network forward / backward.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Workspace {
    Tensor4<Scalar> input;
    std::vector<Tensor4<Scalar>> outputs;  // one per layer
};

template <typename Scalar>
struct Gradients {
    FlatArray<Scalar> params;
    Tensor4<Scalar> input;
};

template <typename Scalar>
Tensor4<Scalar> forward(const Architecture& arch, const FlatArray<Scalar>& params,
                        const Tensor4<Scalar>& input, Workspace<Scalar>& ws, int threads = 1) {
    arch.validate();
    if (input.ch != arch.input_channels) throw ShapeError("forward: input channel mismatch");
    const int div = arch.required_divisor();
    if (input.width % div != 0 || input.height % div != 0 || input.depth % div != 0)
        throw ShapeError("forward: input dims must be divisible by " + std::to_string(div));
    const ParamLayout lay = param_layout(arch);
    if (params.size() != lay.total) throw ShapeError("forward: parameter count mismatch");

    ws.input = input;
    ws.outputs.assign(arch.layers.size(), {});
    const Tensor4<Scalar>* cur = &ws.input;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& spec = arch.layers[i];
        const Scalar* w = params.data() + lay.entries[i].weights;
        const Scalar* b = params.data() + lay.entries[i].biases;
        Tensor4<Scalar>& out = ws.outputs[i];
        switch (spec.kind) {
            case LayerKind::Conv3d:
            case LayerKind::Down2: {
                if (cur->ch != spec.in_ch) throw ShapeError("conv3d: channel mismatch");
                int ow, oh, od;
                detail::conv_out_shape(*cur, spec, ow, oh, od);
                out = Tensor4<Scalar>(spec.out_ch, ow, oh, od);
                detail::conv3d_forward(*cur, w, b, spec, out, threads);
                break;
            }
            case LayerKind::Up2: {
                if (cur->ch != spec.in_ch) throw ShapeError("up2: channel mismatch");
                const int S = spec.stride, K = spec.kernel, P = spec.pad;
                out = Tensor4<Scalar>(spec.out_ch, (cur->width - 1) * S + K - 2 * P,
                                      (cur->height - 1) * S + K - 2 * P,
                                      (cur->depth - 1) * S + K - 2 * P);
                detail::convt3d_forward(*cur, w, b, spec, out, threads);
                break;
            }
            case LayerKind::PReLU: {
                const Scalar slope = w[0];
                out = *cur;
                out.data = (cur->data >= Scalar(0)).select(cur->data, slope * cur->data);
                break;
            }
            case LayerKind::Sigmoid: {
                out = *cur;
                out.data = Scalar(1) / (Scalar(1) + (-cur->data).exp());
                break;
            }
            case LayerKind::SkipAdd: {
                const auto& src = ws.outputs[static_cast<std::size_t>(spec.skip_src)];
                if (!cur->same_shape(src)) throw ShapeError("skip-add: shape mismatch");
                out = *cur;
                out.data += src.data;
                break;
            }
        }
        cur = &out;
    }
    return ws.outputs.back();
}

/// Exact gradients of the forward computation with respect to all parameters
/// and the network input. Requires the workspace from the matching forward.
template <typename Scalar>
Gradients<Scalar> backward(const Architecture& arch, const FlatArray<Scalar>& params,
                           const Workspace<Scalar>& ws, const Tensor4<Scalar>& upstream,
                           int threads = 1) {
    const ParamLayout lay = param_layout(arch);
    const std::size_t n = arch.layers.size();
    if (!upstream.same_shape(ws.outputs.back())) throw ShapeError("backward: upstream shape mismatch");

    Gradients<Scalar> g;
    g.params = FlatArray<Scalar>::Zero(lay.total);

    // gradient w.r.t. each layer's output; filled as consumers run
    std::vector<Tensor4<Scalar>> gout(n);
    gout[n - 1] = upstream;
    auto accum = [](Tensor4<Scalar>& slot, const Tensor4<Scalar>& shape_like, const FlatArray<Scalar>& add) {
        if (slot.data.size() == 0) {
            slot = shape_like;
            slot.data = add;
        } else {
            slot.data += add;
        }
    };

    for (std::size_t ii = n; ii-- > 0;) {
        const auto& spec = arch.layers[ii];
        const Tensor4<Scalar>& x = (ii == 0) ? ws.input : ws.outputs[ii - 1];
        const Tensor4<Scalar>& y = ws.outputs[ii];
        const Tensor4<Scalar>& gy = gout[ii];
        const Scalar* w = params.data() + lay.entries[ii].weights;
        Scalar* dw = g.params.data() + lay.entries[ii].weights;
        Scalar* db = g.params.data() + lay.entries[ii].biases;

        Tensor4<Scalar> gx(x.ch, x.width, x.height, x.depth);
        switch (spec.kind) {
            case LayerKind::Conv3d:
            case LayerKind::Down2:
                detail::conv3d_backward_params(x, gy, spec, dw, db, threads);
                detail::conv3d_backward_input(gy, w, spec, gx, threads);
                break;
            case LayerKind::Up2:
                detail::convt3d_backward_params(x, gy, spec, dw, db, threads);
                detail::convt3d_backward_input(gy, w, spec, gx, threads);
                break;
            case LayerKind::PReLU: {
                const Scalar slope = w[0];
                gx.data = (x.data >= Scalar(0)).select(gy.data, slope * gy.data);
                dw[0] = ((x.data < Scalar(0)).select(x.data * gy.data, FlatArray<Scalar>::Zero(x.data.size()))).sum();
                break;
            }
            case LayerKind::Sigmoid:
                gx.data = gy.data * y.data * (Scalar(1) - y.data);
                break;
            case LayerKind::SkipAdd:
                gx.data = gy.data;
                accum(gout[static_cast<std::size_t>(spec.skip_src)], y, gy.data);
                break;
        }
        if (ii == 0) {
            g.input = std::move(gx);
        } else {
            accum(gout[ii - 1], x, gx.data);
        }
    }
    return g;
}

/// Convenience single-channel wrapper.
template <typename Scalar>
Volume3<Scalar> forward_volume(const Architecture& arch, const FlatArray<Scalar>& params,
                               const Volume3<Scalar>& input, int threads = 1) {
    Workspace<Scalar> ws;
    return volume_from_tensor(forward(arch, params, tensor_from_volume(input), ws, threads));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification (64-bit). The probe loss is
// J = sum(R .* forward(params)) for a fixed random R, whose analytic gradient
// is backward with upstream = R. Relative error uses a 1e-3 denominator floor
// so near-zero gradients are compared absolutely.
// ---------------------------------------------------------------------------

struct GradCheckReport {
    struct LayerErr {
        std::string name;
        double max_rel_err = 0.0;
        Eigen::Index params = 0;
    };
    std::vector<LayerErr> layers;
    double input_max_rel_err = 0.0;
    double max_rel_err = 0.0;
};

GradCheckReport grad_check(const Architecture& arch, int w, int h, int d, std::uint64_t seed,
                           double eps = 1e-4, bool check_input = true, int threads = 1);

}  // namespace mitodet
