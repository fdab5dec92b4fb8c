#pragma once

#include "splicefuse/core.hpp"
#include "splicefuse/features.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace splicefuse {

/// Sentinel for "use every feature" (the All row).
inline constexpr std::size_t kAllFeatures = std::numeric_limits<std::size_t>::max();

inline std::string feature_count_name(std::size_t k) { return k == kAllFeatures ? "All" : std::to_string(k); }

inline std::size_t parse_feature_count(std::string_view s) {
    s = trim(s);
    if (s == "All" || s == "all" || s == "ALL") return kAllFeatures;
    const long long v = parse_int(s);
    if (v < 1) throw FormatError("feature count must be >= 1 or All");
    return static_cast<std::size_t>(v);
}

class BoostingError : public Error {
public:
    using Error::Error;
};

/// Decision stump: polarity +1 predicts authentic (1) when x > threshold,
/// polarity -1 predicts authentic when x <= threshold.
struct StumpLearner {
    std::size_t feature_index = 0;
    double threshold = 0.0;
    int polarity = 1;
    double weighted_error = 0.5;

    int predict(double x) const noexcept { return (polarity > 0) == (x > threshold) ? 1 : 0; }
};

/// Multiplies the weight of every correctly classified sample by beta and renormalizes.
inline std::vector<double> update_weights(std::span<const double> weights, std::span<const int> predictions,
                                          std::span<const int> labels, double beta) {
    if (weights.size() != predictions.size() || weights.size() != labels.size())
        throw ShapeError("update_weights: length mismatch");
    if (!(beta >= 0.0 && beta < 1.0)) throw BoostingError("update_weights: beta must lie in [0,1)");
    std::vector<double> out(weights.begin(), weights.end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (predictions[i] == labels[i]) out[i] *= beta;
    const double total = std::accumulate(out.begin(), out.end(), 0.0);
    if (!(total > 0.0)) throw BoostingError("update_weights: all weight vanished");
    for (double& w : out) w /= total;
    return out;
}

/// Per-feature sample order, computed once and reused by every boosting round.
class SortedFeatures {
public:
    explicit SortedFeatures(const RealMatrix& features) : features_(&features), order_(features.cols()) {
        const auto n = static_cast<std::size_t>(features.rows());
        for (Eigen::Index f = 0; f < features.cols(); ++f) {
            auto& idx = order_[f];
            idx.resize(n);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return features(a, f) < features(b, f); });
        }
    }

    const RealMatrix& features() const { return *features_; }
    const std::vector<std::size_t>& order(std::size_t feature) const { return order_[feature]; }

private:
    const RealMatrix* features_;
    std::vector<std::vector<std::size_t>> order_;
};

/// Exhaustive stump search over non-excluded features and midpoints between
/// consecutive distinct values. Ties: lowest feature index, lowest threshold,
/// then polarity +1.
inline StumpLearner best_stump(const SortedFeatures& sorted, std::span<const int> labels, std::span<const double> weights,
                               const std::vector<char>& excluded) {
    const RealMatrix& x = sorted.features();
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    if (labels.size() != n || weights.size() != n) throw ShapeError("best_stump: length mismatch");
    bool has_pos = false, has_neg = false;
    for (int y : labels) (y == 1 ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw BoostingError("best_stump: both classes must be present");

    double total_pos = 0, total_neg = 0;
    for (std::size_t i = 0; i < n; ++i) (labels[i] == 1 ? total_pos : total_neg) += weights[i];

    StumpLearner best;
    bool found = false;
    for (std::size_t f = 0; f < d; ++f) {
        if (!excluded.empty() && excluded[f]) continue;
        const auto& order = sorted.order(f);
        // weight of each class at or below the current threshold
        double below_pos = 0, below_neg = 0;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const std::size_t i = order[k];
            (labels[i] == 1 ? below_pos : below_neg) += weights[i];
            const double v = x(i, f), next = x(order[k + 1], f);
            if (!(next > v)) continue;
            const double threshold = v + 0.5 * (next - v);
            // +1: authentic above the threshold, errors are positives below and negatives above
            const double err_plus = below_pos + (total_neg - below_neg);
            const double err_minus = below_neg + (total_pos - below_pos);
            for (const auto& [err, pol] : {std::pair{err_plus, 1}, std::pair{err_minus, -1}}) {
                if (!found || err < best.weighted_error) {
                    best = StumpLearner{f, threshold, pol, err};
                    found = true;
                }
            }
        }
    }
    if (!found) throw BoostingError("best_stump: no candidate stump (all features excluded or constant)");
    best.weighted_error = std::max(best.weighted_error, 0.0);
    return best;
}

inline StumpLearner best_stump(const RealMatrix& features, std::span<const int> labels, std::span<const double> weights,
                               const std::vector<char>& excluded = {}) {
    return best_stump(SortedFeatures(features), labels, weights, excluded);
}

struct SelectionResult {
    Tool tool = Tool::wavelet;
    std::size_t k = kAllFeatures;
    std::vector<std::size_t> indices;
    std::vector<double> round_errors;
    /// Set when a round found a zero-error stump and selection stopped there.
    bool stopped_early = false;

    /// `tool,k,idx0,idx1,...`
    void write(std::ostream& out) const {
        out << tool_tag(tool) << ',' << feature_count_name(k);
        for (auto i : indices) out << ',' << i;
        out << '\n';
    }

    /// `round,feature,weighted_error` diagnostics.
    void write_round_errors(std::ostream& out) const {
        out << "round,feature,weighted_error\n";
        for (std::size_t r = 0; r < round_errors.size(); ++r)
            out << r + 1 << ',' << indices[r] << ',' << format_double(round_errors[r]) << '\n';
    }

    static SelectionResult parse(std::string_view line) {
        const auto fields = split(trim(line), ',');
        if (fields.size() < 2) throw FormatError("selection line needs tool and k");
        SelectionResult r;
        r.tool = tool_from_tag(fields[0]);
        r.k = parse_feature_count(fields[1]);
        for (std::size_t i = 2; i < fields.size(); ++i) r.indices.push_back(static_cast<std::size_t>(parse_int(fields[i])));
        return r;
    }
};

/// Optional per-round hook, mostly for tests: (round, weights after the update).
using RoundObserver = std::function<void(std::size_t, const std::vector<double>&)>;

/// AdaBoost feature selection: each round picks the best stump among the
/// features not yet chosen, records its feature, and reweights the samples.
/// k >= dimension returns every index in ascending order. `seed` is accepted
/// for interface stability; the procedure itself is deterministic.
inline SelectionResult select_features(const RealMatrix& features, std::span<const int> labels, std::size_t k,
                                       Tool tool = Tool::wavelet, std::uint64_t seed = 0,
                                       const RoundObserver& observer = {}) {
    (void)seed;
    if (k < 1) throw BoostingError("select_features: k must be >= 1");
    const auto d = static_cast<std::size_t>(features.cols());
    const auto n = static_cast<std::size_t>(features.rows());
    SelectionResult result;
    result.tool = tool;
    result.k = k;
    if (k >= d) {
        result.indices.resize(d);
        std::iota(result.indices.begin(), result.indices.end(), std::size_t{0});
        return result;
    }
    if (labels.size() != n) throw ShapeError("select_features: label count mismatch");

    const SortedFeatures sorted(features);
    std::vector<double> weights(n, 1.0 / static_cast<double>(n));
    std::vector<char> excluded(d, 0);
    std::vector<int> predictions(n);
    for (std::size_t round = 1; round <= k; ++round) {
        StumpLearner stump;
        try {
            stump = best_stump(sorted, labels, weights, excluded);
        } catch (const BoostingError& e) {
            throw BoostingError("boosting round " + std::to_string(round) + ": " + e.what());
        }
        const double eps = stump.weighted_error;
        if (eps >= 0.5)
            throw BoostingError("boosting round " + std::to_string(round) + ": weak learner error " + format_double(eps) +
                                " >= 0.5");
        result.indices.push_back(stump.feature_index);
        result.round_errors.push_back(eps);
        excluded[stump.feature_index] = 1;
        if (eps <= 0.0) {
            result.stopped_early = round < k;
            break;
        }
        for (std::size_t i = 0; i < n; ++i) predictions[i] = stump.predict(features(i, stump.feature_index));
        weights = update_weights(weights, predictions, labels, eps / (1.0 - eps));
        if (observer) observer(round, weights);
    }
    return result;
}

/// Column subset of a feature matrix in selection order.
inline RealMatrix select_columns(const RealMatrix& features, const std::vector<std::size_t>& indices) {
    RealMatrix out(features.rows(), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t c = 0; c < indices.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = features.col(indices[c]);
    return out;
}

}  // namespace splicefuse
