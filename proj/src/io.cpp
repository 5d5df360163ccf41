#include "mitodet/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mitodet {

namespace {

// --- little-endian binary primitives ---------------------------------------

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw CorruptFileError(path + ": truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is, const std::string& path) {
    const std::uint64_t lo = get_u32(is, path);
    const std::uint64_t hi = get_u32(is, path);
    return lo | (hi << 32);
}

std::int32_t get_i32(std::istream& is, const std::string& path) {
    return static_cast<std::int32_t>(get_u32(is, path));
}

float get_f32(std::istream& is, const std::string& path) {
    const std::uint32_t bits = get_u32(is, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void expect_eof(std::istream& is, const std::string& path) {
    char c;
    if (is.read(&c, 1)) throw CorruptFileError(path + ": trailing bytes after payload");
}

// --- number formatting ------------------------------------------------------

std::string shortest(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

double parse_number(const std::string& tok, const std::string& path, std::size_t line_no) {
    double v = 0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path + ": cannot open");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

struct PngReadCtx {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadCtx() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCtx {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteCtx() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace

ImageF read_png_gray(const std::string& path) {
    PngReadCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw CorruptFileError(path + ": cannot open");

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw UnsupportedFormatError(path + ": not a PNG file");

    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw CorruptFileError(path + ": png init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw CorruptFileError(path + ": png init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw CorruptFileError(path + ": PNG decode failed");

    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    const int depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color = png_get_color_type(ctx.png, ctx.info);
    if (color != PNG_COLOR_TYPE_GRAY)
        throw UnsupportedFormatError(path + ": only grayscale PNG is supported");
    if (depth != 8 && depth != 16)
        throw UnsupportedFormatError(path + ": only 8- or 16-bit grayscale is supported (got " +
                                     std::to_string(depth) + ")");

    png_set_interlace_handling(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    const std::size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * rowbytes);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * rowbytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);

    ImageF img(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
    if (depth == 8) {
        for (png_uint_32 y = 0; y < h; ++y)
            for (png_uint_32 x = 0; x < w; ++x)
                img(y, x) = static_cast<float>(rows[y][x]) / 255.0f;
    } else {
        for (png_uint_32 y = 0; y < h; ++y) {
            const unsigned char* r = rows[y];
            for (png_uint_32 x = 0; x < w; ++x) {
                const unsigned v = (static_cast<unsigned>(r[2 * x]) << 8) | r[2 * x + 1];
                img(y, x) = static_cast<float>(v) / 65535.0f;
            }
        }
    }
    return img;
}

void write_png_gray(const std::string& path, const ImageF& img, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16)
        throw UnsupportedFormatError(path + ": bit depth must be 8 or 16");
    const int h = static_cast<int>(img.rows());
    const int w = static_cast<int>(img.cols());

    const std::size_t rowbytes = static_cast<std::size_t>(w) * (bit_depth / 8);
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * rowbytes);
    for (int y = 0; y < h; ++y) {
        unsigned char* r = raw.data() + static_cast<std::size_t>(y) * rowbytes;
        for (int x = 0; x < w; ++x) {
            const float v = std::min(1.0f, std::max(0.0f, img(y, x)));
            if (bit_depth == 8) {
                r[x] = static_cast<unsigned char>(std::lround(v * 255.0f));
            } else {
                const unsigned q = static_cast<unsigned>(std::lround(v * 65535.0f));
                r[2 * x] = static_cast<unsigned char>(q >> 8);
                r[2 * x + 1] = static_cast<unsigned char>(q & 0xff);
            }
        }
    }

    PngWriteCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw CorruptFileError(path + ": cannot open for writing");
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw CorruptFileError(path + ": png init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw CorruptFileError(path + ": png init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw CorruptFileError(path + ": PNG encode failed");

    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + static_cast<std::size_t>(y) * rowbytes;
    png_write_image(ctx.png, rows.data());
    png_write_end(ctx.png, nullptr);
}

ImageSequence<float> load_sequence(const std::string& dir) {
    if (!fs::is_directory(dir)) throw MissingFrameError(dir + ": not a directory");
    std::set<int> indices;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() != 15 || name.rfind("frame_", 0) != 0 || name.substr(11) != ".png") continue;
        const std::string digits = name.substr(6, 5);
        if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
            continue;
        indices.insert(std::stoi(digits));
    }
    if (indices.empty()) throw MissingFrameError(dir + ": no frame_%05d.png files found");
    const int max_idx = *indices.rbegin();
    for (int i = 0; i <= max_idx; ++i)
        if (!indices.count(i))
            throw MissingFrameError(dir + ": frame " + std::to_string(i) + " is missing");

    ImageSequence<float> seq;
    char name[32];
    for (int i = 0; i <= max_idx; ++i) {
        std::snprintf(name, sizeof(name), "frame_%05d.png", i);
        ImageF img = read_png_gray((fs::path(dir) / name).string());
        if (i == 0) {
            seq.height = static_cast<int>(img.rows());
            seq.width = static_cast<int>(img.cols());
        } else if (img.rows() != seq.height || img.cols() != seq.width) {
            throw MixedDimensionsError(dir + ": frame " + std::to_string(i) + " is " +
                                       std::to_string(img.cols()) + "x" + std::to_string(img.rows()) +
                                       ", expected " + std::to_string(seq.width) + "x" +
                                       std::to_string(seq.height));
        }
        seq.frames.push_back(std::move(img));
    }
    return seq;
}

void save_sequence(const std::string& dir, const ImageSequence<float>& seq, int bit_depth) {
    fs::create_directories(dir);
    char name[32];
    for (int i = 0; i < seq.num_frames(); ++i) {
        std::snprintf(name, sizeof(name), "frame_%05d.png", i);
        write_png_gray((fs::path(dir) / name).string(), seq.frames[static_cast<std::size_t>(i)],
                       bit_depth);
    }
}

std::vector<Annotation> read_annotations(const std::string& path, double index_base) {
    const auto lines = read_lines(path);
    if (lines.empty() || lines[0] != "t,x,y")
        throw ParseError(path + ":1: expected header 't,x,y'");
    std::vector<Annotation> anns;
    std::set<std::array<double, 3>> seen;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto cols = split_csv(lines[i]);
        if (cols.size() != 3)
            throw ParseError(path + ":" + std::to_string(i + 1) + ": expected 3 columns, got " +
                             std::to_string(cols.size()));
        Annotation a;
        a.point.t = parse_number(cols[0], path, i + 1) - index_base;
        a.point.x = parse_number(cols[1], path, i + 1) - index_base;
        a.point.y = parse_number(cols[2], path, i + 1) - index_base;
        a.id = static_cast<int>(anns.size());
        if (!seen.insert({a.point.t, a.point.x, a.point.y}).second)
            throw ParseError(path + ":" + std::to_string(i + 1) + ": duplicate (t,x,y) row");
        anns.push_back(a);
    }
    return anns;
}

void write_annotations(const std::string& path, const std::vector<Annotation>& anns,
                       double index_base) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os << "t,x,y\n";
    for (const auto& a : anns)
        os << shortest(a.point.t + index_base) << ',' << shortest(a.point.x + index_base) << ','
           << shortest(a.point.y + index_base) << '\n';
}

std::vector<std::size_t> out_of_bounds(const std::vector<Annotation>& anns, int width, int height,
                                       int frames) {
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < anns.size(); ++i) {
        const auto& p = anns[i].point;
        if (p.x < 0 || p.x >= width || p.y < 0 || p.y >= height || p.t < 0 || p.t >= frames)
            bad.push_back(i);
    }
    return bad;
}

std::vector<Detection> read_detections(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty() || lines[0] != "t,x,y,score")
        throw ParseError(path + ":1: expected header 't,x,y,score'");
    std::vector<Detection> dets;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto cols = split_csv(lines[i]);
        if (cols.size() != 4)
            throw ParseError(path + ":" + std::to_string(i + 1) + ": expected 4 columns, got " +
                             std::to_string(cols.size()));
        Detection d;
        d.point.t = parse_number(cols[0], path, i + 1);
        d.point.x = parse_number(cols[1], path, i + 1);
        d.point.y = parse_number(cols[2], path, i + 1);
        d.score = parse_number(cols[3], path, i + 1);
        dets.push_back(d);
    }
    return dets;
}

void write_detections(const std::string& path, const std::vector<Detection>& dets) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os << "t,x,y,score\n";
    for (const auto& d : dets)
        os << shortest(d.point.t) << ',' << shortest(d.point.x) << ',' << shortest(d.point.y) << ','
           << fixed6(d.score) << '\n';
}

// --- checkpoint --------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'M', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr char kVolMagic[8] = {'M', 'D', 'E', 'T', 'V', 'O', 'L', '1'};
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ckpt.arch.validate();
    if (ckpt.params.size() != ckpt.arch.param_count())
        throw ShapeError(path + ": parameter array does not match architecture");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os.write(kCkptMagic, 8);
    put_u32(os, kCkptVersion);
    put_i32(os, ckpt.arch.input_channels);
    put_u32(os, static_cast<std::uint32_t>(ckpt.arch.layers.size()));
    for (const auto& l : ckpt.arch.layers) {
        put_i32(os, static_cast<std::int32_t>(l.kind));
        put_i32(os, l.in_ch);
        put_i32(os, l.out_ch);
        put_i32(os, l.kernel);
        put_i32(os, l.stride);
        put_i32(os, l.pad);
        put_i32(os, l.skip_src);
    }
    put_u64(os, static_cast<std::uint64_t>(ckpt.params.size()));
    put_u64(os, ckpt.step);
    put_u64(os, ckpt.seed);
    for (Eigen::Index i = 0; i < ckpt.params.size(); ++i) put_f32(os, ckpt.params[i]);
    if (!os) throw CorruptFileError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CorruptFileError(path + ": cannot open");
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw CorruptFileError(path + ": bad magic");
    const std::uint32_t version = get_u32(is, path);
    if (version != kCkptVersion)
        throw VersionMismatchError(path + ": format version " + std::to_string(version) +
                                   ", expected " + std::to_string(kCkptVersion));
    Checkpoint ckpt;
    ckpt.arch.input_channels = get_i32(is, path);
    const std::uint32_t n_layers = get_u32(is, path);
    if (n_layers > 4096) throw CorruptFileError(path + ": implausible layer count");
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        LayerSpec l;
        const std::int32_t kind = get_i32(is, path);
        if (kind < 0 || kind > static_cast<std::int32_t>(LayerKind::SkipAdd))
            throw CorruptFileError(path + ": unknown layer kind " + std::to_string(kind));
        l.kind = static_cast<LayerKind>(kind);
        l.in_ch = get_i32(is, path);
        l.out_ch = get_i32(is, path);
        l.kernel = get_i32(is, path);
        l.stride = get_i32(is, path);
        l.pad = get_i32(is, path);
        l.skip_src = get_i32(is, path);
        ckpt.arch.layers.push_back(l);
    }
    const std::uint64_t n_params = get_u64(is, path);
    ckpt.step = get_u64(is, path);
    ckpt.seed = get_u64(is, path);
    try {
        ckpt.arch.validate();
    } catch (const ShapeError& e) {
        throw CorruptFileError(path + ": invalid architecture: " + e.what());
    }
    if (n_params != static_cast<std::uint64_t>(ckpt.arch.param_count()))
        throw CorruptFileError(path + ": parameter count does not match architecture");
    ckpt.params.resize(static_cast<Eigen::Index>(n_params));
    for (std::uint64_t i = 0; i < n_params; ++i)
        ckpt.params[static_cast<Eigen::Index>(i)] = get_f32(is, path);
    expect_eof(is, path);
    return ckpt;
}

// --- volumes ------------------------------------------------------------------

void save_volume(const std::string& path, const Volume3<float>& vol) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os.write(kVolMagic, 8);
    put_u32(os, static_cast<std::uint32_t>(vol.width));
    put_u32(os, static_cast<std::uint32_t>(vol.height));
    put_u32(os, static_cast<std::uint32_t>(vol.depth));
    for (Eigen::Index i = 0; i < vol.data.size(); ++i) put_f32(os, vol.data[i]);
    if (!os) throw CorruptFileError(path + ": write failed");
}

Volume3<float> load_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CorruptFileError(path + ": cannot open");
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kVolMagic, 8) != 0)
        throw CorruptFileError(path + ": bad magic");
    const int w = static_cast<int>(get_u32(is, path));
    const int h = static_cast<int>(get_u32(is, path));
    const int d = static_cast<int>(get_u32(is, path));
    if (w < 1 || h < 1 || d < 1 || static_cast<std::int64_t>(w) * h * d > (1ll << 31))
        throw CorruptFileError(path + ": implausible dimensions");
    Volume3<float> vol(w, h, d);
    for (Eigen::Index i = 0; i < vol.data.size(); ++i) vol.data[i] = get_f32(is, path);
    expect_eof(is, path);
    return vol;
}

void save_candidate_meta(const std::string& path, const CandidateMeta& m) {
    json j;
    j["origin_x"] = m.meta.origin_x;
    j["origin_y"] = m.meta.origin_y;
    j["origin_t"] = m.meta.origin_t;
    j["pad_mask"] = m.meta.pad_mask;
    j["track_id"] = m.track_id;
    j["window_offset"] = m.window_offset;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os << j.dump(2) << '\n';
}

CandidateMeta load_candidate_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CorruptFileError(path + ": cannot open");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    CandidateMeta m;
    try {
        m.meta.origin_x = j.at("origin_x").get<int>();
        m.meta.origin_y = j.at("origin_y").get<int>();
        m.meta.origin_t = j.at("origin_t").get<int>();
        m.meta.pad_mask = j.at("pad_mask").get<std::vector<std::uint8_t>>();
        m.track_id = j.at("track_id").get<int>();
        m.window_offset = j.at("window_offset").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return m;
}

// --- reports -------------------------------------------------------------------

void write_metrics(const std::string& path, const MetricsReport& m) {
    json j;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["fn"] = m.fn;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os << j.dump(2) << '\n';
}

MetricsReport read_metrics(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CorruptFileError(path + ": cannot open");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    MetricsReport m;
    try {
        m.tp = j.at("tp").get<int>();
        m.fp = j.at("fp").get<int>();
        m.fn = j.at("fn").get<int>();
        m.precision = j.at("precision").get<double>();
        m.recall = j.at("recall").get<double>();
        m.f1 = j.at("f1").get<double>();
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return m;
}

void write_sweep(const std::string& path, const std::string& axis, const std::vector<SweepRow>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os << "axis,threshold,precision,recall,f1\n";
    for (const auto& r : rows)
        os << axis << ',' << shortest(r.threshold) << ',' << fixed6(r.precision) << ','
           << fixed6(r.recall) << ',' << fixed6(r.f1) << '\n';
}

void write_loss_curve(const std::string& path, const std::vector<double>& losses) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CorruptFileError(path + ": cannot open for writing");
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << shortest(losses[i]) << '\n';
}

}  // namespace mitodet
