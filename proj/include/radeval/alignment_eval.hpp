#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "radeval/core_model.hpp"

// Image-text alignment evaluation: cross-modal retrieval recall@K over
// precomputed embeddings, and attention-grid aggregation and rendering.
namespace radeval::alignment {

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace detail {

inline std::uint32_t read_u32_le(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::IoError, "truncated binary header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(std::istream& in) {
    return std::bit_cast<float>(read_u32_le(in));
}

inline void write_f32_le(std::ostream& out, float v) { write_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

inline void expect_magic(std::istream& in, std::string_view magic) {
    char m[4];
    if (!in.read(m, 4) || std::string_view(m, 4) != magic) {
        throw Error(ErrorCode::Validation, "bad magic, expected '" + std::string(magic) + "'");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embeddings and retrieval

/// N x D row-major matrix of embeddings with one id per row.
class EmbeddingSet {
  public:
    EmbeddingSet(std::vector<std::string> ids, std::size_t dims, std::vector<double> data)
        : ids_(std::move(ids)), dims_(dims), data_(std::move(data)) {
        if (dims_ == 0) throw Error(ErrorCode::Validation, "embeddings need at least one dimension");
        if (data_.size() != ids_.size() * dims_) throw Error(ErrorCode::Validation, "embedding matrix size does not match ids x dims");
        for (std::size_t i = 0; i < rows(); ++i) {
            double sq = 0.0;
            for (double v : row(i)) {
                if (!std::isfinite(v)) throw Error(ErrorCode::Validation, "non-finite embedding value for " + ids_[i]);
                sq += v * v;
            }
            if (sq == 0.0) throw Error(ErrorCode::Validation, "zero-norm embedding for " + ids_[i]);
        }
    }

    std::size_t rows() const { return ids_.size(); }
    std::size_t dims() const { return dims_; }
    const std::vector<std::string>& ids() const { return ids_; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dims_, dims_}; }

  private:
    std::vector<std::string> ids_;
    std::size_t dims_;
    std::vector<double> data_;
};

/// JSONL rows of {"id": ..., "vector": [...]}.
inline EmbeddingSet embeddings_from_rows(const std::vector<json>& rows) {
    std::vector<std::string> ids;
    std::vector<double> data;
    std::size_t dims = 0;
    for (const auto& row : rows) {
        auto vec = row.at("vector").get<std::vector<double>>();
        if (ids.empty()) dims = vec.size();
        if (vec.size() != dims) throw Error(ErrorCode::DimensionMismatch, "embedding rows have different lengths");
        ids.push_back(row.at("id").get<std::string>());
        data.insert(data.end(), vec.begin(), vec.end());
    }
    return EmbeddingSet(std::move(ids), dims, std::move(data));
}

/// Binary embeddings: "EMBD", u32 rows, u32 dims, then rows*dims float32,
/// all little-endian. Ids come from a sidecar list.
inline EmbeddingSet read_embeddings_binary(std::istream& in, std::vector<std::string> ids) {
    detail::expect_magic(in, "EMBD");
    const auto rows = detail::read_u32_le(in);
    const auto dims = detail::read_u32_le(in);
    if (rows != ids.size()) throw Error(ErrorCode::Validation, "sidecar id count does not match embedding rows");
    std::vector<double> data(static_cast<std::size_t>(rows) * dims);
    for (auto& v : data) v = detail::read_f32_le(in);
    return EmbeddingSet(std::move(ids), dims, std::move(data));
}

inline void write_embeddings_binary(std::ostream& out, const EmbeddingSet& set) {
    out.write("EMBD", 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(set.rows()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(set.dims()));
    for (std::size_t i = 0; i < set.rows(); ++i)
        for (double v : set.row(i)) detail::write_f32_le(out, static_cast<float>(v));
}

enum class Direction { ImageToText, TextToImage };

inline std::string_view to_string(Direction d) { return d == Direction::ImageToText ? "image_to_text" : "text_to_image"; }

/// Cosine similarity matrix, rows = queries.
inline std::vector<double> cosine_matrix(const EmbeddingSet& queries, const EmbeddingSet& candidates) {
    auto norms = [](const EmbeddingSet& s) {
        std::vector<double> n(s.rows());
        for (std::size_t i = 0; i < s.rows(); ++i) {
            double sq = 0.0;
            for (double v : s.row(i)) sq += v * v;
            n[i] = std::sqrt(sq);
        }
        return n;
    };
    const auto qn = norms(queries);
    const auto cn = norms(candidates);
    std::vector<double> sim(queries.rows() * candidates.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const auto q = queries.row(i);
        for (std::size_t j = 0; j < candidates.rows(); ++j) {
            const auto c = candidates.row(j);
            double dot = 0.0;
            for (std::size_t d = 0; d < q.size(); ++d) dot += q[d] * c[d];
            sim[i * candidates.rows() + j] = dot / (qn[i] * cn[j]);
        }
    }
    return sim;
}

/// Fraction of queries whose paired item (same position) ranks within the
/// top k by cosine similarity; ties go to the lower index.
inline std::map<std::size_t, double> recall_at_k(const EmbeddingSet& images, const EmbeddingSet& texts,
                                                 std::span<const std::size_t> ks, Direction direction) {
    if (images.rows() != texts.rows()) throw Error(ErrorCode::DimensionMismatch, "image and text sets differ in size");
    if (images.dims() != texts.dims()) throw Error(ErrorCode::DimensionMismatch, "image and text embeddings differ in dimension");
    const std::size_t n = images.rows();
    for (auto k : ks)
        if (k < 1 || k > n) throw Error(ErrorCode::KOutOfRange, "k=" + std::to_string(k) + " outside 1.." + std::to_string(n));

    const auto& queries = direction == Direction::ImageToText ? images : texts;
    const auto& candidates = direction == Direction::ImageToText ? texts : images;
    const auto sim = cosine_matrix(queries, candidates);

    // rank[i] = number of candidates ordered strictly before the true pair.
    std::vector<std::size_t> rank(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double own = sim[i * n + i];
        for (std::size_t j = 0; j < n; ++j) {
            const double s = sim[i * n + j];
            if (s > own || (s == own && j < i)) ++rank[i];
        }
    }
    std::map<std::size_t, double> out;
    for (auto k : ks) {
        std::size_t hits = 0;
        for (auto r : rank) hits += r < k ? 1 : 0;
        out[k] = static_cast<double>(hits) / static_cast<double>(n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attention tensors and grids

inline constexpr std::size_t kGridSide = 37;
inline constexpr std::size_t kGridTokens = kGridSide * kGridSide;

/// layers x heads x 1369 image-token weights for one generated word.
class AttentionTensor {
  public:
    AttentionTensor(std::size_t layers, std::size_t heads, std::vector<float> weights, std::string word = {})
        : layers_(layers), heads_(heads), weights_(std::move(weights)), word_(std::move(word)) {
        if (layers_ == 0 || heads_ == 0) throw Error(ErrorCode::Validation, "attention tensor needs layers and heads");
        if (weights_.size() != layers_ * heads_ * kGridTokens) {
            throw Error(ErrorCode::Validation, "attention tensor must hold layers x heads x 1369 weights");
        }
        for (float w : weights_)
            if (!(w >= 0.0f) || !std::isfinite(w)) throw Error(ErrorCode::Validation, "attention weights must be finite and >= 0");
    }

    std::size_t layers() const { return layers_; }
    std::size_t heads() const { return heads_; }
    const std::string& word() const { return word_; }
    const std::vector<float>& weights() const { return weights_; }

    std::span<const float> tokens(std::size_t layer, std::size_t head) const {
        return {weights_.data() + (layer * heads_ + head) * kGridTokens, kGridTokens};
    }

  private:
    std::size_t layers_;
    std::size_t heads_;
    std::vector<float> weights_;
    std::string word_;
};

/// "ATTN", u32 layers, u32 heads, u32 tokens, then float32 weights, all
/// little-endian. The first `skip_leading_tokens` of every head are dropped
/// (for encoders that prepend special tokens); 1369 must remain.
inline AttentionTensor read_attention(std::istream& in, std::size_t skip_leading_tokens = 0, std::string word = {}) {
    detail::expect_magic(in, "ATTN");
    const std::size_t layers = detail::read_u32_le(in);
    const std::size_t heads = detail::read_u32_le(in);
    const std::size_t tokens = detail::read_u32_le(in);
    if (tokens < skip_leading_tokens || tokens - skip_leading_tokens != kGridTokens) {
        throw Error(ErrorCode::Validation, "attention container has " + std::to_string(tokens) + " tokens; " +
                                               std::to_string(kGridTokens) + " image tokens required after skipping " +
                                               std::to_string(skip_leading_tokens));
    }
    if (layers == 0 || heads == 0 || layers > 4096 || heads > 4096) throw Error(ErrorCode::Validation, "implausible attention shape");
    std::vector<float> weights;
    weights.reserve(layers * heads * kGridTokens);
    for (std::size_t lh = 0; lh < layers * heads; ++lh) {
        for (std::size_t t = 0; t < tokens; ++t) {
            const float v = detail::read_f32_le(in);
            if (t >= skip_leading_tokens) weights.push_back(v);
        }
    }
    return AttentionTensor(layers, heads, std::move(weights), std::move(word));
}

inline AttentionTensor read_attention_file(const std::string& path, std::size_t skip_leading_tokens = 0, std::string word = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    return read_attention(in, skip_leading_tokens, std::move(word));
}

inline void write_attention(std::ostream& out, const AttentionTensor& t) {
    out.write("ATTN", 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(t.layers()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(t.heads()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(kGridTokens));
    for (float w : t.weights()) detail::write_f32_le(out, w);
}

/// How one axis (layers or heads) is reduced.
struct Reduction {
    enum class Kind { Mean, Max, Single };
    Kind kind = Kind::Mean;
    std::size_t index = 0;

    static Reduction mean() { return {Kind::Mean, 0}; }
    static Reduction max() { return {Kind::Max, 0}; }
    static Reduction single(std::size_t i) { return {Kind::Single, i}; }

    /// "mean", "max", or a zero-based index.
    static Reduction parse(std::string_view s) {
        if (text::iequals(s, "mean")) return mean();
        if (text::iequals(s, "max")) return max();
        std::size_t idx = 0;
        std::size_t used = 0;
        try {
            idx = std::stoul(std::string(s), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) throw Error(ErrorCode::InvalidArgument, "reduction must be mean, max or an index: " + std::string(s));
        return single(idx);
    }

    std::string label() const {
        switch (kind) {
            case Kind::Mean: return "mean";
            case Kind::Max: return "max";
            case Kind::Single: return std::to_string(index);
        }
        return "mean";
    }
};

struct AttentionGrid {
    std::array<double, kGridTokens> cells{};

    double at(std::size_t row, std::size_t col) const { return cells[row * kGridSide + col]; }

    /// (row, col) of the largest cell; the first in row-major order on ties.
    std::pair<std::size_t, std::size_t> argmax() const {
        const auto it = std::max_element(cells.begin(), cells.end());
        const auto flat = static_cast<std::size_t>(it - cells.begin());
        return {flat / kGridSide, flat % kGridSide};
    }

    bool operator==(const AttentionGrid&) const = default;
};

namespace detail {

template <class Get>
double reduce(std::size_t count, const Reduction& how, Get&& get) {
    switch (how.kind) {
        case Reduction::Kind::Single: return get(how.index);
        case Reduction::Kind::Max: {
            double m = get(0);
            for (std::size_t i = 1; i < count; ++i) m = std::max(m, get(i));
            return m;
        }
        case Reduction::Kind::Mean: break;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < count; ++i) sum += get(i);
    return sum / static_cast<double>(count);
}

}  // namespace detail

/// Reduces heads within each layer, then layers, and lays the 1369 tokens out
/// row-major as 37 x 37.
inline AttentionGrid aggregate_attention(const AttentionTensor& t, const Reduction& layer_mode, const Reduction& head_mode) {
    if (layer_mode.kind == Reduction::Kind::Single && layer_mode.index >= t.layers()) {
        throw Error(ErrorCode::IndexOutOfRange, "layer " + std::to_string(layer_mode.index) + " >= " + std::to_string(t.layers()));
    }
    if (head_mode.kind == Reduction::Kind::Single && head_mode.index >= t.heads()) {
        throw Error(ErrorCode::IndexOutOfRange, "head " + std::to_string(head_mode.index) + " >= " + std::to_string(t.heads()));
    }
    AttentionGrid grid;
    std::vector<double> per_layer(t.layers());
    for (std::size_t tok = 0; tok < kGridTokens; ++tok) {
        for (std::size_t l = 0; l < t.layers(); ++l) {
            per_layer[l] = detail::reduce(t.heads(), head_mode, [&](std::size_t h) {
                return static_cast<double>(t.tokens(l, h)[tok]);
            });
        }
        grid.cells[tok] = detail::reduce(t.layers(), layer_mode, [&](std::size_t l) { return per_layer[l]; });
    }
    return grid;
}

inline void to_json(json& j, const AttentionGrid& g) {
    json rows = json::array();
    for (std::size_t r = 0; r < kGridSide; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < kGridSide; ++c) row.push_back(g.at(r, c));
        rows.push_back(std::move(row));
    }
    j = {{"rows", kGridSide}, {"cols", kGridSide}, {"grid", rows}};
}

inline void from_json(const json& j, AttentionGrid& g) {
    const auto& rows = j.at("grid");
    if (!rows.is_array() || rows.size() != kGridSide) throw Error(ErrorCode::Validation, "grid must have 37 rows");
    AttentionGrid out;
    for (std::size_t r = 0; r < kGridSide; ++r) {
        if (!rows[r].is_array() || rows[r].size() != kGridSide) throw Error(ErrorCode::Validation, "grid rows must have 37 columns");
        for (std::size_t c = 0; c < kGridSide; ++c) out.cells[r * kGridSide + c] = rows[r][c].get<double>();
    }
    g = out;
}

/// Min-max normalization to [0, 1]; a constant grid maps to all zeros.
inline AttentionGrid normalize_grid(const AttentionGrid& g) {
    const auto [lo, hi] = std::minmax_element(g.cells.begin(), g.cells.end());
    AttentionGrid out;
    const double range = *hi - *lo;
    if (range == 0.0) return out;
    for (std::size_t i = 0; i < kGridTokens; ++i) out.cells[i] = (g.cells[i] - *lo) / range;
    return out;
}

// ---------------------------------------------------------------------------
// Grayscale images

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

inline GrayImage read_png_gray(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw Error(ErrorCode::UnreadableBackground, path + ": " + image.message);
    }
    image.format = PNG_FORMAT_GRAY;
    GrayImage out;
    out.width = image.width;
    out.height = image.height;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw Error(ErrorCode::UnreadableBackground, path + ": " + msg);
    }
    return out;
}

/// Binary (P5) or ASCII (P2) PGM; maxval above 255 is rescaled to 8 bits.
inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::UnreadableBackground, "cannot open " + path);
    auto fail = [&](const std::string& why) -> GrayImage { throw Error(ErrorCode::UnreadableBackground, path + ": " + why); };
    auto next_token = [&]() {
        std::string tok;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
            } else if (!text::is_space(c)) {
                tok.push_back(c);
                break;
            }
        }
        while (in.get(c) && !text::is_space(c)) tok.push_back(c);
        return tok;
    };
    const auto magic = next_token();
    if (magic != "P5" && magic != "P2") return fail("not a PGM file");
    long w = 0, h = 0, maxval = 0;
    try {
        w = std::stol(next_token());
        h = std::stol(next_token());
        maxval = std::stol(next_token());
    } catch (const std::exception&) {
        return fail("bad PGM header");
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535 || w > 65536 || h > 65536) return fail("bad PGM header");
    GrayImage out;
    out.width = static_cast<std::size_t>(w);
    out.height = static_cast<std::size_t>(h);
    out.pixels.resize(out.width * out.height);
    for (auto& px : out.pixels) {
        long v = 0;
        if (magic == "P2") {
            try {
                v = std::stol(next_token());
            } catch (const std::exception&) {
                return fail("truncated pixel data");
            }
        } else if (maxval < 256) {
            const int c = in.get();
            if (c == EOF) return fail("truncated pixel data");
            v = c;
        } else {
            const int hi = in.get();
            const int lo = in.get();
            if (lo == EOF) return fail("truncated pixel data");
            v = (hi << 8) | lo;
        }
        px = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp<double>(static_cast<double>(v) / maxval, 0.0, 1.0)));
    }
    return out;
}

/// PNG or PGM, by content.
inline GrayImage read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::UnreadableBackground, "cannot open " + path);
    char head[2] = {0, 0};
    in.read(head, 2);
    in.close();
    if (head[0] == 'P' && (head[1] == '5' || head[1] == '2')) return read_pgm(path);
    return read_png_gray(path);
}

inline void write_png_gray(const std::string& path, const GrayImage& img) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        throw Error(ErrorCode::IoError, path + ": " + image.message);
    }
}

inline constexpr std::size_t kHeatmapSide = 518;

/// 518 x 518 grayscale heatmap: normalized grid scaled to 0..255 and
/// upscaled nearest-neighbor; with a background, a 50% alpha blend over the
/// background resized the same way.
inline GrayImage heatmap_image(const AttentionGrid& grid, const GrayImage* background = nullptr) {
    const auto norm = normalize_grid(grid);
    GrayImage out;
    out.width = out.height = kHeatmapSide;
    out.pixels.resize(kHeatmapSide * kHeatmapSide);
    for (std::size_t y = 0; y < kHeatmapSide; ++y) {
        for (std::size_t x = 0; x < kHeatmapSide; ++x) {
            const std::size_t r = y * kGridSide / kHeatmapSide;
            const std::size_t c = x * kGridSide / kHeatmapSide;
            double v = 255.0 * norm.at(r, c);
            if (background) {
                const std::size_t bx = x * background->width / kHeatmapSide;
                const std::size_t by = y * background->height / kHeatmapSide;
                v = 0.5 * v + 0.5 * background->at(bx, by);
            }
            out.pixels[y * kHeatmapSide + x] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

struct RenderedFiles {
    std::string json_path;
    std::string png_path;
};

/// Writes `<out>.json` (the raw grid) and `<out>.png` (the heatmap). A
/// ".png" or ".json" extension on `out` is replaced.
inline RenderedFiles render_heatmap(const AttentionGrid& grid, const std::optional<std::string>& background,
                                    const std::string& out, const json& metadata = json::object()) {
    for (double v : grid.cells)
        if (!std::isfinite(v) || v < 0) throw Error(ErrorCode::Validation, "grid must be finite and nonnegative");
    std::filesystem::path stem(out);
    if (stem.extension() == ".png" || stem.extension() == ".json") stem.replace_extension();
    RenderedFiles files{stem.string() + ".json", stem.string() + ".png"};

    std::optional<GrayImage> bg;
    if (background) {
        bg = read_image(*background);
        if (bg->width == 0 || bg->height == 0) throw Error(ErrorCode::UnreadableBackground, *background + ": empty image");
    }

    json dump = grid;
    for (const auto& [k, v] : metadata.items()) dump[k] = v;
    std::ofstream js(files.json_path);
    if (!js) throw Error(ErrorCode::IoError, "cannot write " + files.json_path);
    js << dump.dump() << '\n';
    if (!js) throw Error(ErrorCode::IoError, "short write to " + files.json_path);
    js.close();

    write_png_gray(files.png_path, heatmap_image(grid, bg ? &*bg : nullptr));
    return files;
}

inline AttentionGrid read_grid_json(const std::string& path) { return read_json_file(path).get<AttentionGrid>(); }

}  // namespace radeval::alignment
