#pragma once

#include "splicefuse/core.hpp"
#include "splicefuse/dataset.hpp"
#include "splicefuse/haar.hpp"
#include "splicefuse/texture.hpp"

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace splicefuse {

enum class Tool : int { wavelet = 0, glcm_edge = 1, run_length = 2 };

inline constexpr std::array<Tool, 3> kTools = {Tool::wavelet, Tool::glcm_edge, Tool::run_length};

inline std::string_view tool_tag(Tool t) {
    switch (t) {
        case Tool::wavelet: return "WAVELET";
        case Tool::glcm_edge: return "GLCM_EDGE";
        case Tool::run_length: return "RUN_LENGTH";
    }
    return "?";
}

inline Tool tool_from_tag(std::string_view tag) {
    for (Tool t : kTools)
        if (tool_tag(t) == tag) return t;
    throw FormatError("unknown tool tag '" + std::string(tag) + "'");
}

inline constexpr std::size_t feature_arity(Tool t) {
    switch (t) {
        case Tool::wavelet: return 48;
        case Tool::glcm_edge: return 96;
        case Tool::run_length: return 220;
    }
    return 0;
}

struct FeatureVector {
    Tool tool;
    std::string block_id;
    std::vector<double> values;
};

/// Knobs of the texture tools. Defaults give the 48/96/220 layouts.
struct FeatureConfig {
    int wavelet_levels = 3;
    int glcm_levels = 16;
    int run_length_levels = 16;
};

// ---------------------------------------------------------------------------
// WAVELET
// ---------------------------------------------------------------------------

/// Pixel minus the mean of its 4-neighbours, borders replicated.
inline RealMatrix prediction_error(const IntMatrix& img) {
    const Eigen::Index n = img.rows(), m = img.cols();
    RealMatrix out(n, m);
    auto at = [&](Eigen::Index i, Eigen::Index j) {
        return static_cast<double>(img(std::clamp<Eigen::Index>(i, 0, n - 1), std::clamp<Eigen::Index>(j, 0, m - 1)));
    };
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            out(i, j) = at(i, j) - 0.25 * (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1));
    return out;
}

/// Mean and population standard deviation of |c| over a subband.
inline std::array<double, 2> magnitude_stats(const RealMatrix& band) {
    const auto count = static_cast<double>(band.size());
    const double mean = band.cwiseAbs().sum() / count;
    double ss = 0;
    for (Eigen::Index k = 0; k < band.size(); ++k) {
        const double d = std::abs(band.data()[k]) - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / count)};
}

/// Per level j = 1..levels: LL_j, HL_j, LH_j, HH_j, each as (mean|c|, std|c|);
/// first for the pixels, then for the prediction-error image.
/// Length is 16 * levels (48 for the default 3 levels).
inline std::vector<double> wavelet_features(const IntMatrix& pixels, int levels = 3) {
    std::vector<double> out;
    out.reserve(16 * static_cast<std::size_t>(levels));
    for (const RealMatrix& source : {RealMatrix(pixels.cast<double>()), prediction_error(pixels)}) {
        const HaarPyramid pyr = haar_dwt2(source, levels);
        for (int l = 0; l < levels; ++l) {
            for (const RealMatrix* band : {&pyr.approximations[l], &pyr.details[l].horizontal, &pyr.details[l].vertical,
                                           &pyr.details[l].diagonal}) {
                const auto st = magnitude_stats(*band);
                out.insert(out.end(), st.begin(), st.end());
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// GLCM_EDGE
// ---------------------------------------------------------------------------

inline constexpr std::array<Offset, 4> kGlcmOffsets = {Offset{1, 0}, Offset{0, 1}, Offset{1, 1}, Offset{1, -1}};

/// For each edge map (h, v, d, anti-d) and each offset in kGlcmOffsets, the
/// six GlcmStats. Length 4 * 4 * 6 = 96.
inline std::vector<double> glcm_edge_features(const IntMatrix& pixels, int levels = 16) {
    const EdgeMaps edges = edge_images(pixels);
    std::vector<double> out;
    out.reserve(96);
    for (const IntMatrix& map : edges.maps) {
        const IntMatrix q = quantize(map, levels);
        for (const Offset& off : kGlcmOffsets) {
            const auto st = glcm_stats(glcm(q, levels, off).normalized).as_array();
            out.insert(out.end(), st.begin(), st.end());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// RUN_LENGTH
// ---------------------------------------------------------------------------

/// Mean, variance, skewness and kurtosis of a histogram over bin positions
/// 1..size. Zero mass or zero variance gives zeros for the undefined terms.
inline std::array<double, 4> histogram_moments(const Eigen::VectorXd& hist) {
    const double mass = hist.sum();
    if (mass <= 0.0) return {0, 0, 0, 0};
    double mean = 0;
    for (Eigen::Index k = 0; k < hist.size(); ++k) mean += static_cast<double>(k + 1) * hist(k);
    mean /= mass;
    double m2 = 0, m3 = 0, m4 = 0;
    for (Eigen::Index k = 0; k < hist.size(); ++k) {
        const double d = static_cast<double>(k + 1) - mean;
        m2 += d * d * hist(k);
        m3 += d * d * d * hist(k);
        m4 += d * d * d * d * hist(k);
    }
    m2 /= mass;
    m3 /= mass;
    m4 /= mass;
    if (m2 <= 1e-12) return {mean, 0, 0, 0};
    return {mean, m2, m3 / std::pow(m2, 1.5), m4 / (m2 * m2)};
}

/// Source images of the run-length tool: the quantized block and its
/// horizontal, vertical and diagonal absolute-difference images.
inline std::array<IntMatrix, 4> run_length_sources(const IntMatrix& pixels, int levels) {
    const EdgeMaps edges = edge_images(pixels);
    return {quantize(pixels, levels), quantize(edges[EdgeDirection::horizontal], levels),
            quantize(edges[EdgeDirection::vertical], levels), quantize(edges[EdgeDirection::diagonal], levels)};
}

/// Layout (220 values):
///   [0, 176)  for source s in (image, dh, dv, dd), direction in (0,45,90,135):
///             the 11 RunLengthStats
///   [176,220) histogram_moments of 11 aggregate histograms:
///             0-3  run-length histogram of each source summed over directions
///             4-7  run-length histogram of each direction summed over sources
///             8    run-length histogram of all 16 matrices
///             9    gray-level run histogram of the image source, all directions
///             10   gray-level run histogram of the three difference sources
inline std::vector<double> run_length_features(const IntMatrix& pixels, int levels = 16) {
    const auto sources = run_length_sources(pixels, levels);
    const auto pixel_count = static_cast<std::int64_t>(pixels.size());
    const Eigen::Index max_len = std::max(pixels.rows(), pixels.cols());

    std::vector<double> out;
    out.reserve(220);
    std::array<Eigen::VectorXd, 11> aggregates;
    for (int a = 0; a < 9; ++a) aggregates[a] = Eigen::VectorXd::Zero(max_len);
    aggregates[9] = Eigen::VectorXd::Zero(levels);
    aggregates[10] = Eigen::VectorXd::Zero(levels);

    for (int s = 0; s < 4; ++s) {
        for (int d = 0; d < 4; ++d) {
            const RunLengthMatrix r = run_length_matrix(sources[s], levels, kRunDirections[d]);
            const auto st = run_length_stats(r, pixel_count).as_array();
            out.insert(out.end(), st.begin(), st.end());
            const Eigen::VectorXd by_length = r.runs.cast<double>().colwise().sum().transpose();
            const Eigen::VectorXd by_level = r.runs.cast<double>().rowwise().sum();
            aggregates[s] += by_length;
            aggregates[4 + d] += by_length;
            aggregates[8] += by_length;
            aggregates[s == 0 ? 9 : 10] += by_level;
        }
    }
    for (const auto& hist : aggregates) {
        const auto mo = histogram_moments(hist);
        out.insert(out.end(), mo.begin(), mo.end());
    }
    return out;
}

// ---------------------------------------------------------------------------

inline std::vector<double> extract_values(Tool tool, const IntMatrix& pixels, const FeatureConfig& cfg = {}) {
    switch (tool) {
        case Tool::wavelet: return wavelet_features(pixels, cfg.wavelet_levels);
        case Tool::glcm_edge: return glcm_edge_features(pixels, cfg.glcm_levels);
        case Tool::run_length: return run_length_features(pixels, cfg.run_length_levels);
    }
    return {};
}

inline FeatureVector extract_features(Tool tool, const ImageBlock& block, const FeatureConfig& cfg = {}) {
    FeatureVector fv{tool, block.id(), extract_values(tool, block.pixels(), cfg)};
    for (double v : fv.values)
        if (!std::isfinite(v)) throw Error("non-finite feature for block '" + block.id() + "'");
    return fv;
}

}  // namespace splicefuse
