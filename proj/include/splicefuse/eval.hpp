#pragma once

#include "splicefuse/boostsel.hpp"
#include "splicefuse/core.hpp"
#include "splicefuse/features.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace splicefuse {

class UndefinedRateError : public Error {
public:
    using Error::Error;
};

/// Confusion counts with forged as the positive class.
struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    std::size_t forged() const noexcept { return tp + fn; }
    std::size_t authentic() const noexcept { return tn + fp; }
    bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(std::span<const Label> verdicts, std::span<const Label> labels) {
    if (verdicts.size() != labels.size())
        throw ShapeError("confusion: " + std::to_string(verdicts.size()) + " verdicts for " + std::to_string(labels.size()) +
                         " labels");
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool said_forged = verdicts[i] == Label::forged;
        if (labels[i] == Label::forged)
            (said_forged ? c.tp : c.fn)++;
        else
            (said_forged ? c.fp : c.tn)++;
    }
    return c;
}

/// tp / (tp + fn)
inline double sensitivity(const ConfusionCounts& c) {
    if (c.forged() == 0) throw UndefinedRateError("sensitivity undefined: no forged samples");
    return static_cast<double>(c.tp) / static_cast<double>(c.forged());
}

/// tn / (tn + fp)
inline double specificity(const ConfusionCounts& c) {
    if (c.authentic() == 0) throw UndefinedRateError("specificity undefined: no authentic samples");
    return static_cast<double>(c.tn) / static_cast<double>(c.authentic());
}

enum class Metric { sensitivity, specificity };

inline double rate(const ConfusionCounts& c, Metric m) { return m == Metric::sensitivity ? sensitivity(c) : specificity(c); }

inline std::string_view metric_name(Metric m) { return m == Metric::sensitivity ? "sensitivity" : "specificity"; }

// Report columns: the three tools followed by the fused result.
inline constexpr std::size_t kColumnCount = 4;
inline constexpr std::size_t kFusedColumn = 3;
inline constexpr std::array<std::string_view, kColumnCount> kColumnNames{"DWT", "EdgeGLCM", "RunLength", "NFIS"};

inline std::size_t column_of(Tool t) { return static_cast<std::size_t>(t); }

inline std::size_t column_from_name(std::string_view s) {
    for (std::size_t c = 0; c < kColumnCount; ++c)
        if (kColumnNames[c] == s) return c;
    throw FormatError("unknown report column '" + std::string(s) + "'");
}

struct RunReport {
    std::size_t run_index = 0;
    std::size_t k = kAllFeatures;
    std::array<ConfusionCounts, kColumnCount> counts{};

    double sensitivity(std::size_t column) const { return splicefuse::sensitivity(counts.at(column)); }
    double specificity(std::size_t column) const { return splicefuse::specificity(counts.at(column)); }

    void write(std::ostream& out) const {
        out << "REPORT v1 run=" << run_index << " k=" << feature_count_name(k) << '\n';
        for (std::size_t c = 0; c < kColumnCount; ++c) {
            const auto& x = counts[c];
            out << kColumnNames[c] << " tp=" << x.tp << " fp=" << x.fp << " tn=" << x.tn << " fn=" << x.fn;
            if (x.forged() > 0) out << " sensitivity=" << format_double(splicefuse::sensitivity(x));
            if (x.authentic() > 0) out << " specificity=" << format_double(splicefuse::specificity(x));
            out << '\n';
        }
    }

    static RunReport read(std::istream& in) {
        std::string line;
        if (!std::getline(in, line) || line.rfind("REPORT v1 ", 0) != 0) throw FormatError("not a REPORT v1 file");
        RunReport r;
        r.run_index = static_cast<std::size_t>(parse_int(token_value(line, "run")));
        r.k = parse_feature_count(token_value(line, "k"));
        for (std::size_t c = 0; c < kColumnCount; ++c) {
            if (!std::getline(in, line)) throw FormatError("REPORT file truncated");
            const auto fields = split(trim(line), ' ');
            if (fields.empty() || column_from_name(fields[0]) != c) throw FormatError("REPORT column out of order");
            auto count = [&](std::string_view key) { return static_cast<std::size_t>(parse_int(token_value(line, key))); };
            r.counts[c] = {count("tp"), count("fp"), count("tn"), count("fn")};
        }
        return r;
    }
};

enum class Aggregation { best, mean };

inline Aggregation parse_aggregation(std::string_view s) {
    s = trim(s);
    if (s == "best") return Aggregation::best;
    if (s == "mean") return Aggregation::mean;
    throw FormatError("aggregation must be best or mean, got '" + std::string(s) + "'");
}

inline std::string_view aggregation_name(Aggregation a) { return a == Aggregation::best ? "best" : "mean"; }

/// Rows are feature counts, columns DWT/EdgeGLCM/RunLength/NFIS. Empty cells
/// have no defined rate in any run.
struct SummaryTable {
    Metric metric = Metric::sensitivity;
    std::vector<std::size_t> ks;
    std::vector<std::array<std::optional<double>, kColumnCount>> cells;

    std::optional<double> at(std::size_t k, std::size_t column) const {
        for (std::size_t r = 0; r < ks.size(); ++r)
            if (ks[r] == k) return cells[r].at(column);
        return std::nullopt;
    }

    void write_csv(std::ostream& out) const {
        out << "features";
        for (auto name : kColumnNames) out << ',' << name;
        out << '\n';
        for (std::size_t r = 0; r < ks.size(); ++r) {
            out << feature_count_name(ks[r]);
            for (const auto& v : cells[r]) {
                out << ',';
                if (v)
                    out << format_double(*v);
                else
                    out << "NA";
            }
            out << '\n';
        }
    }
};

/// Per (k, column): maximum (best) or arithmetic mean over the runs that
/// produced a defined rate. Rows follow `ks`; when `ks` is empty, the order in
/// which feature counts first appear in `reports`.
inline SummaryTable aggregate_runs(std::span<const RunReport> reports, Metric metric, Aggregation mode,
                                   std::vector<std::size_t> ks = {}) {
    if (ks.empty())
        for (const auto& r : reports)
            if (std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
    SummaryTable t;
    t.metric = metric;
    t.ks = ks;
    t.cells.resize(ks.size());
    for (std::size_t row = 0; row < ks.size(); ++row) {
        for (std::size_t c = 0; c < kColumnCount; ++c) {
            std::vector<double> values;
            for (const auto& r : reports) {
                if (r.k != ks[row]) continue;
                try {
                    values.push_back(rate(r.counts[c], metric));
                } catch (const UndefinedRateError&) {
                }
            }
            if (values.empty()) continue;
            double v = values[0];
            if (mode == Aggregation::best) {
                for (double x : values) v = std::max(v, x);
            } else {
                v = 0.0;
                for (double x : values) v += x;
                v /= static_cast<double>(values.size());
            }
            t.cells[row][c] = v;
        }
    }
    return t;
}

}  // namespace splicefuse
