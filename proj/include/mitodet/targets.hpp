#pragma once

#include "mitodet/candidates.hpp"
#include "mitodet/core.hpp"

#include <cmath>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// Ground-truth likelihood maps: each annotation becomes a Gaussian peak
//   L(p) = exp(-((p_x-x_k)^2/sx^2 + (p_y-y_k)^2/sy^2 + (p_t-t_k)^2/st^2))
// and multiple annotations are combined voxelwise by max.
// ---------------------------------------------------------------------------

struct SigmaParams {
    double sigma_x = 5.0;
    double sigma_y = 5.0;
    double sigma_t = 2.0;

    void validate() const {
        if (!(sigma_x > 0.0)) throw BadSigmaError("targets.sigma_x must be > 0");
        if (!(sigma_y > 0.0)) throw BadSigmaError("targets.sigma_y must be > 0");
        if (!(sigma_t > 0.0)) throw BadSigmaError("targets.sigma_t must be > 0");
    }
};

/// Likelihood map of one annotation in crop-local coordinates, evaluated at
/// every integer voxel. The exponential factorizes per axis, so the volume is
/// the outer product of three 1-D profiles.
template <typename Scalar>
Volume3<Scalar> single_annotation_map(const Point3& ann_local, const SigmaParams& sigma,
                                      int w, int h, int d) {
    sigma.validate();
    Volume3<Scalar> vol(w, h, d);

    const Eigen::ArrayXd xs = Eigen::ArrayXd::LinSpaced(w, 0.0, static_cast<double>(w - 1));
    const Eigen::ArrayXd ys = Eigen::ArrayXd::LinSpaced(h, 0.0, static_cast<double>(h - 1));
    const Eigen::ArrayXd ts = Eigen::ArrayXd::LinSpaced(d, 0.0, static_cast<double>(d - 1));
    const Eigen::ArrayXd ex = (-(xs - ann_local.x).square() / (sigma.sigma_x * sigma.sigma_x)).exp();
    const Eigen::ArrayXd ey = (-(ys - ann_local.y).square() / (sigma.sigma_y * sigma.sigma_y)).exp();
    const Eigen::ArrayXd et = (-(ts - ann_local.t).square() / (sigma.sigma_t * sigma.sigma_t)).exp();

    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> plane =
        ey.matrix() * ex.matrix().transpose();
    for (int t = 0; t < d; ++t)
        vol.slice(t) = (plane.array() * et[t]).cast<Scalar>();
    return vol;
}

/// Voxelwise maximum over a list of same-shape maps; an empty list yields the
/// all-zero volume (the negative-candidate target).
template <typename Scalar>
Volume3<Scalar> aggregate_max(const std::vector<Volume3<Scalar>>& maps, int w, int h, int d) {
    Volume3<Scalar> out(w, h, d);
    for (const auto& m : maps) {
        if (!out.same_shape(m)) throw ShapeError("aggregate_max: shape mismatch");
        out.data = out.data.max(m.data);
    }
    return out;
}

/// Target for one crop: annotations are mapped to local coordinates, those
/// within the crop extended by a 3-sigma margin per axis contribute a peak,
/// and padded (unobserved) slices are forced to zero.
template <typename Scalar>
Volume3<Scalar> build_targets(const CropMeta& meta, int w, int h, int d,
                              const std::vector<Annotation>& anns, const SigmaParams& sigma) {
    sigma.validate();
    std::vector<Volume3<Scalar>> maps;
    for (const auto& ann : anns) {
        const Point3 local = to_local(ann.point, meta);
        if (local.x < -3.0 * sigma.sigma_x || local.x > (w - 1) + 3.0 * sigma.sigma_x) continue;
        if (local.y < -3.0 * sigma.sigma_y || local.y > (h - 1) + 3.0 * sigma.sigma_y) continue;
        if (local.t < -3.0 * sigma.sigma_t || local.t > (d - 1) + 3.0 * sigma.sigma_t) continue;
        maps.push_back(single_annotation_map<Scalar>(local, sigma, w, h, d));
    }
    Volume3<Scalar> target = aggregate_max(maps, w, h, d);
    for (int t = 0; t < d; ++t)
        if (!meta.pad_mask.empty() && meta.padded(t)) target.slice(t).setZero();
    return target;
}

template <typename Scalar>
Volume3<Scalar> build_targets(const CandidateSequence<Scalar>& cand,
                              const std::vector<Annotation>& anns, const SigmaParams& sigma) {
    return build_targets<Scalar>(cand.meta, cand.volume.width, cand.volume.height,
                                 cand.volume.depth, anns, sigma);
}

}  // namespace mitodet
