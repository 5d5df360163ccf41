#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Validation-class errors (bad parameters, bad config). CLI maps these to exit 2.
struct ValidationError : Error {
    using Error::Error;
};
struct BadKernelError : ValidationError {
    using ValidationError::ValidationError;
};
struct BadSigmaError : ValidationError {
    using ValidationError::ValidationError;
};
struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

// Runtime-class errors (bad files, failed invariants at run time). CLI maps to exit 3.
struct MissingFrameError : Error {
    using Error::Error;
};
struct MixedDimensionsError : Error {
    using Error::Error;
};
struct UnsupportedFormatError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct CorruptFileError : Error {
    using Error::Error;
};
struct VersionMismatchError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct DivergedError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Dense types. Images are row-major Eigen arrays indexed (y, x) so that x is
// the fastest-varying axis in memory; volumes stack such slices along t.
// ---------------------------------------------------------------------------

template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageF = Image<float>;
using ImageD = Image<double>;
using Mask = Image<std::uint8_t>;

template <typename Scalar>
using FlatArray = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// A spatio-temporal point: x = column, y = row, t = 0-based frame index.
struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double t = 0.0;
};

/// A ground-truth mitosis event at an integral frame.
struct Annotation {
    Point3 point;
    int id = 0;
};

/// A detected event with a confidence score in [0,1].
struct Detection {
    Point3 point;
    double score = 0.0;
};

/// T grayscale frames sharing one width x height, intensities in [0,1].
template <typename Scalar = float>
struct ImageSequence {
    int width = 0;
    int height = 0;
    std::vector<Image<Scalar>> frames;
    std::map<std::string, std::string> metadata;

    int num_frames() const { return static_cast<int>(frames.size()); }
};

using ImageSequenceF = ImageSequence<float>;

/// Dense real-valued volume, x fastest, then y, then t.
/// flat index = x + width * (y + height * t)
template <typename Scalar>
struct Volume3 {
    int width = 0;
    int height = 0;
    int depth = 0;
    FlatArray<Scalar> data;

    Volume3() = default;
    Volume3(int w, int h, int d) : width(w), height(h), depth(d) {
        if (w < 1 || h < 1 || d < 1) throw ShapeError("Volume3: all dims must be >= 1");
        data = FlatArray<Scalar>::Zero(static_cast<Eigen::Index>(w) * h * d);
    }

    Eigen::Index size() const { return data.size(); }
    Eigen::Index index(int x, int y, int t) const {
        return x + static_cast<Eigen::Index>(width) * (y + static_cast<Eigen::Index>(height) * t);
    }
    Scalar& at(int x, int y, int t) { return data[index(x, y, t)]; }
    Scalar at(int x, int y, int t) const { return data[index(x, y, t)]; }

    bool same_shape(const Volume3& o) const {
        return width == o.width && height == o.height && depth == o.depth;
    }

    /// View of one temporal slice as a (height x width) image.
    Eigen::Map<Image<Scalar>> slice(int t) {
        return {data.data() + index(0, 0, t), height, width};
    }
    Eigen::Map<const Image<Scalar>> slice(int t) const {
        return {data.data() + index(0, 0, t), height, width};
    }

    /// View of one x-row.
    Eigen::Map<FlatArray<Scalar>> row(int t, int y) {
        return {data.data() + index(0, y, t), width};
    }
    Eigen::Map<const FlatArray<Scalar>> row(int t, int y) const {
        return {data.data() + index(0, y, t), width};
    }

    template <typename T>
    Volume3<T> cast() const {
        Volume3<T> out;
        out.width = width;
        out.height = height;
        out.depth = depth;
        out.data = data.template cast<T>();
        return out;
    }
};

using VolumeF = Volume3<float>;
using VolumeD = Volume3<double>;

/// Placement of a crop inside its source sequence. Origins may be negative
/// when the crop extends past the image border; pad_mask flags temporal
/// slices that are zero-filled rather than observed.
struct CropMeta {
    int origin_x = 0;
    int origin_y = 0;
    int origin_t = 0;
    std::vector<std::uint8_t> pad_mask;  // length = crop depth, 1 = padded

    bool padded(int t) const { return pad_mask[static_cast<std::size_t>(t)] != 0; }
};

// ---------------------------------------------------------------------------
// Local <-> global coordinate transforms (mutual inverses).
// ---------------------------------------------------------------------------

inline Point3 to_global(const Point3& local, const CropMeta& meta) {
    return {local.x + meta.origin_x, local.y + meta.origin_y, local.t + meta.origin_t};
}

inline Point3 to_local(const Point3& global, const CropMeta& meta) {
    return {global.x - meta.origin_x, global.y - meta.origin_y, global.t - meta.origin_t};
}

}  // namespace mitodet
