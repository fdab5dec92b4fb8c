#pragma once

#include "splicefuse/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace splicefuse {

/// Uniform binning of [0,255] into `levels` bins of width 255/levels.
/// A value falling exactly on a bin edge goes to the lower bin.
inline int quantize_level(int value, int levels) {
    if (value <= 0) return 0;
    const int scaled = value * levels;
    int q = scaled / 255;
    if (scaled % 255 == 0) --q;
    return std::clamp(q, 0, levels - 1);
}

inline IntMatrix quantize(const IntMatrix& img, int levels) {
    if (levels < 2) throw ShapeError("quantize: levels must be >= 2");
    return img.unaryExpr([levels](int v) { return quantize_level(v, levels); });
}

enum class EdgeDirection : int { horizontal = 0, vertical = 1, diagonal = 2, anti_diagonal = 3 };

/// Absolute forward differences along the four directions. Each map has the
/// input's shape; positions without a forward neighbour copy the nearest
/// computed row/column.
struct EdgeMaps {
    std::array<IntMatrix, 4> maps;

    const IntMatrix& operator[](EdgeDirection d) const { return maps[static_cast<int>(d)]; }
};

inline EdgeMaps edge_images(const IntMatrix& img) {
    const Eigen::Index n = img.rows(), m = img.cols();
    if (n < 2 || m < 2) throw ShapeError("edge_images: need at least 2x2 pixels");
    EdgeMaps out;
    for (auto& map : out.maps) map.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            const Eigen::Index r = std::min(i, n - 2), c = std::min(j, m - 2);
            out.maps[0](i, j) = std::abs(img(i, c + 1) - img(i, c));
            out.maps[1](i, j) = std::abs(img(r + 1, j) - img(r, j));
            out.maps[2](i, j) = std::abs(img(r + 1, c + 1) - img(r, c));
            out.maps[3](i, j) = std::abs(img(r + 1, c) - img(r, c + 1));
        }
    }
    for (auto& map : out.maps) map = map.cwiseMin(255);
    return out;
}

/// Pixel displacement: dx along columns, dy along rows.
struct Offset {
    int dx = 1;
    int dy = 0;
};

/// Directed (non-symmetrized) gray-level co-occurrence matrix.
struct Glcm {
    int levels = 0;
    Offset offset;
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;
    Eigen::MatrixXd normalized;

    std::int64_t pair_count() const { return counts.sum(); }
};

inline Glcm glcm(const IntMatrix& levels_img, int levels, Offset offset) {
    if (levels < 2) throw ShapeError("glcm: levels must be >= 2");
    if (offset.dx == 0 && offset.dy == 0) throw ShapeError("glcm: offset must be nonzero");
    const Eigen::Index n = levels_img.rows(), m = levels_img.cols();
    if (std::abs(offset.dx) >= m || std::abs(offset.dy) >= n)
        throw ShapeError("glcm: offset exceeds the matrix extent, no valid pixel pairs");
    if (levels_img.minCoeff() < 0 || levels_img.maxCoeff() >= levels)
        throw ShapeError("glcm: values must be quantized to [0, levels-1]");
    Glcm g;
    g.levels = levels;
    g.offset = offset;
    g.counts.setZero(levels, levels);
    const Eigen::Index i0 = std::max(0, -offset.dy), i1 = std::min<Eigen::Index>(n, n - offset.dy);
    const Eigen::Index j0 = std::max(0, -offset.dx), j1 = std::min<Eigen::Index>(m, m - offset.dx);
    for (Eigen::Index i = i0; i < i1; ++i)
        for (Eigen::Index j = j0; j < j1; ++j) ++g.counts(levels_img(i, j), levels_img(i + offset.dy, j + offset.dx));
    const auto total = static_cast<double>(g.counts.sum());
    g.normalized = g.counts.cast<double>() / total;
    return g;
}

/// Haralick-style statistics of a normalized GLCM, in feature order.
struct GlcmStats {
    double contrast = 0;
    double correlation = 0;
    double energy = 0;
    double homogeneity = 0;
    double entropy = 0;
    double dissimilarity = 0;

    static constexpr int kCount = 6;
    std::array<double, kCount> as_array() const {
        return {contrast, correlation, energy, homogeneity, entropy, dissimilarity};
    }
};

inline GlcmStats glcm_stats(const Eigen::MatrixXd& p) {
    GlcmStats s;
    const Eigen::Index levels = p.rows();
    double mu_i = 0, mu_j = 0;
    for (Eigen::Index i = 0; i < levels; ++i)
        for (Eigen::Index j = 0; j < levels; ++j) {
            mu_i += static_cast<double>(i) * p(i, j);
            mu_j += static_cast<double>(j) * p(i, j);
        }
    double var_i = 0, var_j = 0, cov = 0;
    for (Eigen::Index i = 0; i < levels; ++i) {
        for (Eigen::Index j = 0; j < levels; ++j) {
            const double v = p(i, j);
            if (v == 0.0) continue;
            const double d = static_cast<double>(i - j);
            s.contrast += d * d * v;
            s.energy += v * v;
            s.homogeneity += v / (1.0 + d * d);
            s.entropy -= v * std::log(v);
            s.dissimilarity += std::abs(d) * v;
            var_i += (i - mu_i) * (i - mu_i) * v;
            var_j += (j - mu_j) * (j - mu_j) * v;
            cov += (i - mu_i) * (j - mu_j) * v;
        }
    }
    // zero marginal variance: correlation undefined, reported as 0
    constexpr double kVarFloor = 1e-12;
    s.correlation = (var_i > kVarFloor && var_j > kVarFloor) ? cov / std::sqrt(var_i * var_j) : 0.0;
    // a one-cell distribution has entropy exactly 0; avoid -0.0
    if (s.entropy == 0.0) s.entropy = 0.0;
    return s;
}

enum class RunDirection : int { deg0 = 0, deg45 = 1, deg90 = 2, deg135 = 3 };

inline constexpr std::array<RunDirection, 4> kRunDirections = {RunDirection::deg0, RunDirection::deg45,
                                                               RunDirection::deg90, RunDirection::deg135};

/// r(g, l): number of maximal runs of level g with length l (column l-1).
struct RunLengthMatrix {
    int levels = 0;
    RunDirection direction = RunDirection::deg0;
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> runs;

    int max_length() const { return static_cast<int>(runs.cols()); }
    std::int64_t at(int g, int length) const { return runs(g, length - 1); }
    std::int64_t total_runs() const { return runs.sum(); }
    std::int64_t covered_pixels() const {
        std::int64_t n = 0;
        for (Eigen::Index l = 0; l < runs.cols(); ++l) n += (l + 1) * runs.col(l).sum();
        return n;
    }
};

/// Scan lines: 0° along rows, 90° along columns, 45° along anti-diagonals
/// (bottom-left to top-right), 135° along diagonals.
inline RunLengthMatrix run_length_matrix(const IntMatrix& levels_img, int levels, RunDirection direction) {
    const Eigen::Index n = levels_img.rows(), m = levels_img.cols();
    if (levels < 1) throw ShapeError("run_length_matrix: levels must be >= 1");
    if (n == 0 || m == 0) throw ShapeError("run_length_matrix: empty matrix");
    if (levels_img.minCoeff() < 0 || levels_img.maxCoeff() >= levels)
        throw ShapeError("run_length_matrix: values must be quantized to [0, levels-1]");
    RunLengthMatrix r;
    r.levels = levels;
    r.direction = direction;
    r.runs.setZero(levels, std::max(n, m));

    auto scan = [&](Eigen::Index i, Eigen::Index j, Eigen::Index di, Eigen::Index dj) {
        int current = levels_img(i, j);
        Eigen::Index length = 0;
        while (i >= 0 && i < n && j >= 0 && j < m) {
            const int v = levels_img(i, j);
            if (v == current) {
                ++length;
            } else {
                ++r.runs(current, length - 1);
                current = v;
                length = 1;
            }
            i += di;
            j += dj;
        }
        ++r.runs(current, length - 1);
    };

    switch (direction) {
        case RunDirection::deg0:
            for (Eigen::Index i = 0; i < n; ++i) scan(i, 0, 0, 1);
            break;
        case RunDirection::deg90:
            for (Eigen::Index j = 0; j < m; ++j) scan(0, j, 1, 0);
            break;
        case RunDirection::deg45:
            // start on the left column then the bottom row, walking up-right
            for (Eigen::Index i = 0; i < n; ++i) scan(i, 0, -1, 1);
            for (Eigen::Index j = 1; j < m; ++j) scan(n - 1, j, -1, 1);
            break;
        case RunDirection::deg135:
            // start on the left column then the top row, walking down-right
            for (Eigen::Index i = n - 1; i >= 0; --i) scan(i, 0, 1, 1);
            for (Eigen::Index j = 1; j < m; ++j) scan(0, j, 1, 1);
            break;
    }
    return r;
}

/// The eleven classical run-length statistics, in feature order. Gray levels
/// are indexed from 1 inside the gray-level-emphasis terms.
struct RunLengthStats {
    double sre = 0, lre = 0, gln = 0, rln = 0, rp = 0;
    double lgre = 0, hgre = 0, srlge = 0, srhge = 0, lrlge = 0, lrhge = 0;

    static constexpr int kCount = 11;
    std::array<double, kCount> as_array() const { return {sre, lre, gln, rln, rp, lgre, hgre, srlge, srhge, lrlge, lrhge}; }
};

inline RunLengthStats run_length_stats(const RunLengthMatrix& r, std::int64_t pixel_count) {
    RunLengthStats s;
    const auto total = static_cast<double>(r.total_runs());
    if (total <= 0.0) return s;
    Eigen::VectorXd per_level = Eigen::VectorXd::Zero(r.runs.rows());
    Eigen::VectorXd per_length = Eigen::VectorXd::Zero(r.runs.cols());
    for (Eigen::Index g = 0; g < r.runs.rows(); ++g) {
        const double i2 = static_cast<double>((g + 1) * (g + 1));
        for (Eigen::Index l = 0; l < r.runs.cols(); ++l) {
            const auto count = static_cast<double>(r.runs(g, l));
            if (count == 0.0) continue;
            const double l2 = static_cast<double>((l + 1) * (l + 1));
            per_level(g) += count;
            per_length(l) += count;
            s.sre += count / l2;
            s.lre += count * l2;
            s.lgre += count / i2;
            s.hgre += count * i2;
            s.srlge += count / (i2 * l2);
            s.srhge += count * i2 / l2;
            s.lrlge += count * l2 / i2;
            s.lrhge += count * i2 * l2;
        }
    }
    s.gln = per_level.squaredNorm();
    s.rln = per_length.squaredNorm();
    for (double* v : {&s.sre, &s.lre, &s.gln, &s.rln, &s.lgre, &s.hgre, &s.srlge, &s.srhge, &s.lrlge, &s.lrhge})
        *v /= total;
    s.rp = pixel_count > 0 ? total / static_cast<double>(pixel_count) : 0.0;
    return s;
}

}  // namespace splicefuse
