#pragma once

#include "mitodet/core.hpp"
#include "mitodet/net.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mitodet {

// ---------------------------------------------------------------------------
// Frame directories: frame_00000.png, frame_00001.png, ... contiguous from 0.
// 8- or 16-bit grayscale PNG; intensities are divided by the bit depth's max
// value on load, so pixels land in [0,1].
// ---------------------------------------------------------------------------

ImageF read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const ImageF& img, int bit_depth = 8);

ImageSequence<float> load_sequence(const std::string& dir);
void save_sequence(const std::string& dir, const ImageSequence<float>& seq, int bit_depth = 8);

// ---------------------------------------------------------------------------
// Annotation CSV: header `t,x,y`, one event per line. `index_base` shifts all
// coordinates on read (and back on write) for 1-indexed exports. Duplicate
// (t,x,y) rows and malformed lines raise ParseError with the line number.
// ---------------------------------------------------------------------------

std::vector<Annotation> read_annotations(const std::string& path, double index_base = 0.0);
void write_annotations(const std::string& path, const std::vector<Annotation>& anns,
                       double index_base = 0.0);

/// Indices of rows lying outside a width x height x frames sequence. Callers
/// surface these as warnings; the rows stay in the table.
std::vector<std::size_t> out_of_bounds(const std::vector<Annotation>& anns, int width, int height,
                                       int frames);

// Detection CSV: header `t,x,y,score`; score fixed to 6 decimal places,
// coordinates serialized shortest-round-trip.
std::vector<Detection> read_detections(const std::string& path);
void write_detections(const std::string& path, const std::vector<Detection>& dets);

// ---------------------------------------------------------------------------
// Checkpoint: magic, format version, layer table, step/seed counters, then
// the flat parameter array as 32-bit little-endian floats. Loading a
// checkpoint saved by this writer is bit-exact.
// ---------------------------------------------------------------------------

struct Checkpoint {
    Architecture arch;
    FlatArray<float> params;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Volume binary (magic, dims, 32-bit little-endian floats, x fastest) plus a
// JSON sidecar carrying the crop placement.
// ---------------------------------------------------------------------------

void save_volume(const std::string& path, const Volume3<float>& vol);
Volume3<float> load_volume(const std::string& path);

struct CandidateMeta {
    CropMeta meta;
    int track_id = 0;
    int window_offset = 0;
};

void save_candidate_meta(const std::string& path, const CandidateMeta& m);
CandidateMeta load_candidate_meta(const std::string& path);

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

struct MetricsReport {
    int tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

void write_metrics(const std::string& path, const MetricsReport& m);
MetricsReport read_metrics(const std::string& path);

struct SweepRow {
    double threshold = 0.0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

void write_sweep(const std::string& path, const std::string& axis, const std::vector<SweepRow>& rows);

void write_loss_curve(const std::string& path, const std::vector<double>& losses);

}  // namespace mitodet
