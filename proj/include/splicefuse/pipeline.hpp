#pragma once

#include "splicefuse/anfis.hpp"
#include "splicefuse/boostsel.hpp"
#include "splicefuse/calibrate.hpp"
#include "splicefuse/core.hpp"
#include "splicefuse/dataset.hpp"
#include "splicefuse/eval.hpp"
#include "splicefuse/features.hpp"
#include "splicefuse/image_io.hpp"
#include "splicefuse/svm.hpp"
#include "splicefuse/synthetic.hpp"

#include <array>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace splicefuse {

namespace fs = std::filesystem;

class PipelineError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Inclusive log2 range lo:hi:step.
struct Log2Range {
    int lo = 0, hi = 0, step = 1;

    std::vector<double> values() const { return pow2_grid(lo, hi, step); }
    std::string str() const { return std::to_string(lo) + ":" + std::to_string(hi) + ":" + std::to_string(step); }

    static Log2Range parse(std::string_view s) {
        const auto f = split(trim(s), ':');
        if (f.size() != 3) throw FormatError("log2 range must be lo:hi:step, got '" + std::string(s) + "'");
        Log2Range r{static_cast<int>(parse_int(trim(f[0]))), static_cast<int>(parse_int(trim(f[1]))),
                    static_cast<int>(parse_int(trim(f[2])))};
        if (r.step < 1 || r.hi < r.lo) throw FormatError("bad log2 range '" + std::string(s) + "'");
        return r;
    }
};

/// Plain `key = value` file; `#` starts a comment.
struct PipelineConfig {
    fs::path dataset;
    std::uint64_t seed = 1;
    int runs = 5;
    double train_fraction = 0.9;
    std::vector<std::size_t> feature_counts{30, 50, 75, 100, kAllFeatures};
    int block_size = kBlockSize;
    FeatureConfig features;
    Log2Range svm_c_log2{-5, 15, 2};
    Log2Range svm_gamma_log2{-15, 3, 2};
    int cv_folds = 5;
    double svm_tol = 1e-3;
    double anfis_radius = 0.5;
    std::size_t anfis_epochs = 50;
    ConsequentType anfis_consequent = ConsequentType::linear;
    double anfis_step = 0.01;
    double threshold = 0.5;
    Aggregation aggregation = Aggregation::best;
    int workers = 1;
    fs::path out;

    void validate() const {
        if (!(threshold > 0.0 && threshold < 1.0)) throw PipelineError("threshold must lie in (0,1)");
        if (runs < 1) throw PipelineError("runs must be >= 1");
        if (feature_counts.empty()) throw PipelineError("feature_counts is empty");
        for (auto k : feature_counts)
            if (k < 1) throw PipelineError("feature counts must be >= 1 or All");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw PipelineError("train_fraction must lie in (0,1)");
        if (cv_folds < 2) throw PipelineError("cv_folds must be >= 2");
        if (!(anfis_radius > 0.0)) throw PipelineError("anfis_radius must be positive");
        if (!(anfis_step > 0.0)) throw PipelineError("anfis_step must be positive");
        if (anfis_epochs < 1) throw PipelineError("anfis_epochs must be >= 1");
        if (workers < 1) throw PipelineError("workers must be >= 1");
        if (block_size < 2) throw PipelineError("block_size must be >= 2");
    }

    void set(std::string_view key, std::string_view value) {
        value = trim(value);
        const std::string v(value);
        if (key == "dataset") dataset = v;
        else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(value));
        else if (key == "runs") runs = static_cast<int>(parse_int(value));
        else if (key == "train_fraction") train_fraction = parse_double(value);
        else if (key == "feature_counts") {
            feature_counts.clear();
            for (auto f : split(value, ',')) feature_counts.push_back(parse_feature_count(trim(f)));
        } else if (key == "block_size") block_size = static_cast<int>(parse_int(value));
        else if (key == "wavelet_levels") features.wavelet_levels = static_cast<int>(parse_int(value));
        else if (key == "glcm_levels") features.glcm_levels = static_cast<int>(parse_int(value));
        else if (key == "run_length_levels") features.run_length_levels = static_cast<int>(parse_int(value));
        else if (key == "svm_c_log2") svm_c_log2 = Log2Range::parse(value);
        else if (key == "svm_gamma_log2") svm_gamma_log2 = Log2Range::parse(value);
        else if (key == "cv_folds") cv_folds = static_cast<int>(parse_int(value));
        else if (key == "svm_tol") svm_tol = parse_double(value);
        else if (key == "anfis_radius") anfis_radius = parse_double(value);
        else if (key == "anfis_epochs") anfis_epochs = static_cast<std::size_t>(parse_int(value));
        else if (key == "anfis_consequent") anfis_consequent = parse_consequent(value);
        else if (key == "anfis_step") anfis_step = parse_double(value);
        else if (key == "threshold") threshold = parse_double(value);
        else if (key == "aggregation") aggregation = parse_aggregation(value);
        else if (key == "workers") workers = static_cast<int>(parse_int(value));
        else if (key == "out") out = v;
        else throw FormatError("unknown config key '" + std::string(key) + "'");
    }

    static PipelineConfig parse(std::istream& in) {
        PipelineConfig cfg;
        std::string line;
        int number = 0;
        while (std::getline(in, line)) {
            ++number;
            std::string_view s = line;
            if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
            s = trim(s);
            if (s.empty()) continue;
            const auto eq = s.find('=');
            if (eq == std::string_view::npos) throw FormatError("config line " + std::to_string(number) + ": expected key = value");
            try {
                cfg.set(trim(s.substr(0, eq)), s.substr(eq + 1));
            } catch (const Error& e) {
                throw FormatError("config line " + std::to_string(number) + ": " + e.what());
            }
        }
        return cfg;
    }

    static PipelineConfig load(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw PipelineError("cannot open config '" + path.string() + "'");
        return parse(in);
    }

    void write(std::ostream& o) const {
        o << "dataset = " << dataset.generic_string() << '\n'
          << "seed = " << seed << '\n'
          << "runs = " << runs << '\n'
          << "train_fraction = " << format_double(train_fraction) << '\n'
          << "feature_counts = ";
        for (std::size_t i = 0; i < feature_counts.size(); ++i) o << (i ? "," : "") << feature_count_name(feature_counts[i]);
        o << '\n'
          << "block_size = " << block_size << '\n'
          << "wavelet_levels = " << features.wavelet_levels << '\n'
          << "glcm_levels = " << features.glcm_levels << '\n'
          << "run_length_levels = " << features.run_length_levels << '\n'
          << "svm_c_log2 = " << svm_c_log2.str() << '\n'
          << "svm_gamma_log2 = " << svm_gamma_log2.str() << '\n'
          << "cv_folds = " << cv_folds << '\n'
          << "svm_tol = " << format_double(svm_tol) << '\n'
          << "anfis_radius = " << format_double(anfis_radius) << '\n'
          << "anfis_epochs = " << anfis_epochs << '\n'
          << "anfis_consequent = " << consequent_name(anfis_consequent) << '\n'
          << "anfis_step = " << format_double(anfis_step) << '\n'
          << "threshold = " << format_double(threshold) << '\n'
          << "aggregation = " << aggregation_name(aggregation) << '\n'
          << "workers = " << workers << '\n'
          << "out = " << out.generic_string() << '\n';
    }
};

/// Output directory: explicit setting, else $SPLICEFUSE_OUT, else ./splicefuse_out.
inline fs::path resolve_out_dir(const PipelineConfig& cfg) {
    if (!cfg.out.empty()) return cfg.out;
    if (const char* env = std::getenv("SPLICEFUSE_OUT"); env && *env) return env;
    return "splicefuse_out";
}

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Feature tables
// ---------------------------------------------------------------------------

struct FeatureTable {
    Tool tool = Tool::wavelet;
    std::vector<std::string> ids;
    std::vector<int> labels;
    RealMatrix values;

    std::size_t rows() const { return ids.size(); }

    void write_csv(std::ostream& out) const {
        out << "block_id,label";
        for (Eigen::Index f = 0; f < values.cols(); ++f) out << ",f" << f;
        out << '\n';
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out << ids[i] << ',' << labels[i];
            for (Eigen::Index f = 0; f < values.cols(); ++f) out << ',' << format_double(values(static_cast<Eigen::Index>(i), f));
            out << '\n';
        }
    }

    static FeatureTable read_csv(std::istream& in, Tool tool) {
        FeatureTable t;
        t.tool = tool;
        std::string line;
        if (!std::getline(in, line)) throw FormatError("feature CSV is empty");
        const auto header = split(trim(line), ',');
        if (header.size() < 2 || header[0] != "block_id" || header[1] != "label") throw FormatError("bad feature CSV header");
        const std::size_t dim = header.size() - 2;
        std::vector<std::vector<double>> rows;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            const auto f = split(trim(line), ',');
            if (f.size() != dim + 2) throw FormatError("feature CSV row for '" + std::string(f[0]) + "' has wrong width");
            t.ids.emplace_back(f[0]);
            t.labels.push_back(to_int(label_from_int(static_cast<int>(parse_int(f[1])))));
            std::vector<double> r(dim);
            for (std::size_t d = 0; d < dim; ++d) r[d] = parse_double(f[d + 2]);
            rows.push_back(std::move(r));
        }
        t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t d = 0; d < dim; ++d) t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
        return t;
    }

    /// Row subset by id, in the given order.
    std::pair<RealMatrix, std::vector<int>> rows_for(const std::vector<std::string>& wanted) const {
        std::map<std::string_view, std::size_t> index;
        for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
        RealMatrix x(static_cast<Eigen::Index>(wanted.size()), values.cols());
        std::vector<int> y(wanted.size());
        for (std::size_t r = 0; r < wanted.size(); ++r) {
            const auto it = index.find(wanted[r]);
            if (it == index.end()) throw PipelineError("block '" + wanted[r] + "' missing from " + std::string(tool_tag(tool)) + " features");
            x.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(it->second));
            y[r] = labels[it->second];
        }
        return {std::move(x), std::move(y)};
    }
};

inline fs::path feature_path(const fs::path& out, Tool tool) { return out / "features" / (std::string(tool_tag(tool)) + ".csv"); }

/// Feature tables for every block, one per tool, computed on `workers` threads.
inline std::array<FeatureTable, 3> extract_tables(const std::vector<ImageBlock>& blocks, const FeatureConfig& fc, int workers) {
    std::array<FeatureTable, 3> tables;
    for (Tool tool : kTools) {
        auto& t = tables[static_cast<std::size_t>(tool)];
        t.tool = tool;
        t.values.resize(static_cast<Eigen::Index>(blocks.size()), static_cast<Eigen::Index>(feature_arity(tool)));
        for (const auto& b : blocks) {
            t.ids.push_back(b.id());
            t.labels.push_back(to_int(b.label()));
        }
    }
    parallel_for(blocks.size(), workers, [&](std::size_t i) {
        for (Tool tool : kTools) {
            auto fv = extract_features(tool, blocks[i], fc);
            auto& t = tables[static_cast<std::size_t>(tool)];
            if (fv.values.size() != static_cast<std::size_t>(t.values.cols()))
                throw PipelineError("feature arity mismatch for " + std::string(tool_tag(tool)));
            for (std::size_t d = 0; d < fv.values.size(); ++d)
                t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = fv.values[d];
        }
    });
    return tables;
}

struct ExtractSummary {
    std::size_t blocks = 0;
    std::size_t rejected = 0;
    std::array<fs::path, 3> files;
};

/// Loads the corpus and writes `<out>/features/<TOOL>.csv` plus `<out>/rejected.txt`.
inline ExtractSummary cmd_extract(const PipelineConfig& cfg, const Logger& log = {}) {
    cfg.validate();
    if (cfg.dataset.empty()) throw PipelineError("no dataset root configured");
    const fs::path out = resolve_out_dir(cfg);
    const Corpus corpus = load_corpus(cfg.dataset, cfg.block_size);
    if (log) log("loaded " + std::to_string(corpus.blocks.size()) + " blocks, rejected " + std::to_string(corpus.report.rejected.size()));
    const auto tables = extract_tables(corpus.blocks, cfg.features, cfg.workers);
    fs::create_directories(out / "features");
    ExtractSummary s;
    s.blocks = corpus.blocks.size();
    s.rejected = corpus.report.rejected.size();
    for (Tool tool : kTools) {
        const auto path = feature_path(out, tool);
        std::ofstream f(path);
        tables[static_cast<std::size_t>(tool)].write_csv(f);
        if (!f) throw PipelineError("cannot write '" + path.string() + "'");
        s.files[static_cast<std::size_t>(tool)] = path;
    }
    std::ofstream rej(out / "rejected.txt");
    corpus.report.write(rej);
    return s;
}

inline std::array<FeatureTable, 3> load_feature_tables(const fs::path& out) {
    std::array<FeatureTable, 3> tables;
    for (Tool tool : kTools) {
        const auto path = feature_path(out, tool);
        std::ifstream in(path);
        if (!in) throw PipelineError("missing feature file '" + path.string() + "'; run extract first");
        tables[static_cast<std::size_t>(tool)] = FeatureTable::read_csv(in, tool);
    }
    for (Tool tool : {Tool::glcm_edge, Tool::run_length})
        if (tables[static_cast<std::size_t>(tool)].ids != tables[0].ids) throw PipelineError("feature files disagree on block ids");
    return tables;
}

// ---------------------------------------------------------------------------
// Experiment bundles
// ---------------------------------------------------------------------------

struct PredictResult {
    std::array<double, 3> probabilities{};
    FusedVerdict fused;
};

/// Everything needed to classify a block for one (run, k) cell.
struct ExperimentBundle {
    std::size_t run = 1;
    std::size_t k = kAllFeatures;
    int block_size = kBlockSize;
    double threshold = 0.5;
    FeatureConfig features;
    std::array<SelectionResult, 3> selections;
    std::array<SvmModel, 3> svms;
    std::array<SigmoidCalibrator, 3> calibrators;
    AnfisModel anfis;
    std::optional<RunReport> report;

    /// Calibrated per-tool probabilities for raw feature rows (one per tool).
    std::array<double, 3> tool_probabilities(const std::array<std::vector<double>, 3>& raw) const {
        std::array<double, 3> p{};
        for (std::size_t t = 0; t < 3; ++t) {
            const auto& idx = selections[t].indices;
            std::vector<double> x(idx.size());
            for (std::size_t c = 0; c < idx.size(); ++c) {
                if (idx[c] >= raw[t].size()) throw ShapeError("selected feature index beyond feature vector");
                x[c] = raw[t][idx[c]];
            }
            p[t] = calibrators[t](decision_value(svms[t], x));
        }
        return p;
    }

    PredictResult predict_features(const std::array<std::vector<double>, 3>& raw) const {
        PredictResult r;
        r.probabilities = tool_probabilities(raw);
        r.fused = fused_verdict(anfis, r.probabilities, threshold);
        return r;
    }

    PredictResult predict(const IntMatrix& pixels) const {
        if (pixels.rows() != block_size || pixels.cols() != block_size)
            throw ShapeError("image is " + std::to_string(pixels.cols()) + "x" + std::to_string(pixels.rows()) + ", expected " +
                             std::to_string(block_size) + "x" + std::to_string(block_size));
        const ImageBlock block("input", pixels, Label::authentic, block_size);
        std::array<std::vector<double>, 3> raw;
        for (Tool tool : kTools) raw[static_cast<std::size_t>(tool)] = extract_features(tool, block, features).values;
        return predict_features(raw);
    }

    void save(const fs::path& dir) const {
        fs::create_directories(dir);
        auto open = [&](const char* name) {
            std::ofstream f(dir / name);
            if (!f) throw PipelineError("cannot write '" + (dir / name).string() + "'");
            return f;
        };
        {
            auto f = open("bundle.txt");
            f << "BUNDLE v1 run=" << run << " k=" << feature_count_name(k) << " block_size=" << block_size
              << " threshold=" << format_double(threshold) << " wavelet_levels=" << features.wavelet_levels
              << " glcm_levels=" << features.glcm_levels << " run_length_levels=" << features.run_length_levels << '\n';
        }
        {
            auto f = open("selection.txt");
            for (const auto& s : selections) s.write(f);
        }
        {
            auto f = open("calibration.txt");
            for (std::size_t t = 0; t < 3; ++t) write_calibrator(f, tool_tag(kTools[t]), calibrators[t]);
        }
        for (std::size_t t = 0; t < 3; ++t) {
            std::ofstream f(dir / ("svm_" + std::string(tool_tag(kTools[t])) + ".txt"));
            svms[t].write(f);
        }
        {
            auto f = open("anfis.txt");
            anfis.write(f);
        }
        if (report) {
            auto f = open("report.txt");
            report->write(f);
        }
    }

    static ExperimentBundle load(const fs::path& dir) {
        auto open = [&](const std::string& name) {
            std::ifstream f(dir / name);
            if (!f) throw PipelineError("bundle file '" + (dir / name).string() + "' missing");
            return f;
        };
        ExperimentBundle b;
        {
            auto f = open("bundle.txt");
            std::string line;
            std::getline(f, line);
            if (line.rfind("BUNDLE v1 ", 0) != 0) throw FormatError("not a BUNDLE v1 file");
            b.run = static_cast<std::size_t>(parse_int(token_value(line, "run")));
            b.k = parse_feature_count(token_value(line, "k"));
            b.block_size = static_cast<int>(parse_int(token_value(line, "block_size")));
            b.threshold = parse_double(token_value(line, "threshold"));
            b.features.wavelet_levels = static_cast<int>(parse_int(token_value(line, "wavelet_levels")));
            b.features.glcm_levels = static_cast<int>(parse_int(token_value(line, "glcm_levels")));
            b.features.run_length_levels = static_cast<int>(parse_int(token_value(line, "run_length_levels")));
        }
        {
            auto f = open("selection.txt");
            std::string line;
            for (std::size_t t = 0; t < 3; ++t) {
                if (!std::getline(f, line)) throw FormatError("selection file truncated");
                b.selections[t] = SelectionResult::parse(line);
                if (b.selections[t].tool != kTools[t]) throw FormatError("selection lines out of tool order");
            }
        }
        {
            auto f = open("calibration.txt");
            std::string line;
            for (std::size_t t = 0; t < 3; ++t) {
                if (!std::getline(f, line)) throw FormatError("calibration file truncated");
                auto [tag, c] = parse_calibrator(line);
                if (tool_from_tag(tag) != kTools[t]) throw FormatError("calibration lines out of tool order");
                b.calibrators[t] = c;
            }
        }
        for (std::size_t t = 0; t < 3; ++t) {
            auto f = open("svm_" + std::string(tool_tag(kTools[t])) + ".txt");
            b.svms[t] = SvmModel::read(f);
        }
        {
            auto f = open("anfis.txt");
            b.anfis = AnfisModel::read(f);
        }
        if (std::ifstream f(dir / "report.txt"); f) b.report = RunReport::read(f);
        return b;
    }
};

inline std::string cell_name(std::size_t run, std::size_t k) { return "run" + std::to_string(run) + "_k" + feature_count_name(k); }

inline fs::path bundle_dir(const fs::path& out, std::size_t run, std::size_t k) { return out / "bundles" / cell_name(run, k); }

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One tool's trained stage for a fixed training split and feature subset.
struct ToolStage {
    SelectionResult selection;
    GridSearchReport grid;
    SvmModel svm;
    SigmoidFit calibration;
    std::vector<double> train_probabilities;
};

inline ToolStage train_tool_stage(const RealMatrix& x_train, const std::vector<int>& y_train, const SelectionResult& selection,
                                  const PipelineConfig& cfg, std::uint64_t grid_seed) {
    ToolStage s;
    s.selection = selection;
    const RealMatrix xs = select_columns(x_train, selection.indices);
    GridSearchOptions go;
    go.folds = cfg.cv_folds;
    go.tol = cfg.svm_tol;
    go.workers = 1;
    s.grid = grid_search(xs, y_train, cfg.svm_c_log2.values(), cfg.svm_gamma_log2.values(), grid_seed, go);
    bool any_ok = false;
    for (const auto& c : s.grid.cells) any_ok = any_ok || !c.failed;
    if (!any_ok) throw PipelineError("every SVM grid cell failed: " + s.grid.cells.front().error);
    s.svm = train_svm(xs, y_train, s.grid.best(), cfg.svm_tol);
    const auto dv = decision_values(s.svm, xs);
    s.calibration = fit_sigmoid(dv, y_train);
    s.train_probabilities.resize(dv.size());
    for (std::size_t i = 0; i < dv.size(); ++i) s.train_probabilities[i] = s.calibration.calibrator(dv[i]);
    return s;
}

struct CellOutcome {
    std::size_t run = 0;
    std::size_t k = 0;
    bool ok = false;
    std::string error;
    std::optional<RunReport> report;
};

struct TrainSummary {
    std::vector<CellOutcome> cells;
    std::size_t failed() const {
        std::size_t n = 0;
        for (const auto& c : cells) n += !c.ok;
        return n;
    }
};

/// Runs every (run, k) cell: selection, SVM grid search and training, sigmoid
/// calibration per tool, then ANFIS fusion on the training split's calibrated
/// triples. A failing cell writes `<bundle>/FAILED` and the others proceed.
/// Tool stages are shared between cells whose selections coincide.
/// Called as each cell starts; throwing from it fails that cell.
using CellHook = std::function<void(std::size_t run, std::size_t k)>;

inline TrainSummary cmd_train(const PipelineConfig& cfg, const Logger& log = {}, const CellHook& on_cell = {}) {
    cfg.validate();
    const fs::path out = resolve_out_dir(cfg);
    const auto tables = load_feature_tables(out);
    std::vector<SampleRef> refs;
    for (std::size_t i = 0; i < tables[0].rows(); ++i) refs.push_back({tables[0].ids[i], label_from_int(tables[0].labels[i])});
    const auto plans = make_splits(refs, cfg.seed, cfg.runs, cfg.train_fraction);
    {
        fs::create_directories(out / "splits");
        for (const auto& p : plans) {
            std::ofstream f(out / "splits" / ("run" + std::to_string(p.run_index) + ".txt"));
            f << "SPLIT v1 run=" << p.run_index << " seed=" << p.seed << " train=" << p.train_ids.size()
              << " test=" << p.test_ids.size() << '\n';
            for (const auto& id : p.train_ids) f << "train " << id << '\n';
            for (const auto& id : p.test_ids) f << "test " << id << '\n';
        }
        std::ofstream f(out / "config.txt");
        cfg.write(f);
    }

    struct RunData {
        std::array<RealMatrix, 3> x_train, x_test;
        std::vector<int> y_train, y_test;
    };
    std::vector<RunData> runs(plans.size());
    for (std::size_t r = 0; r < plans.size(); ++r)
        for (std::size_t t = 0; t < 3; ++t) {
            auto [xtr, ytr] = tables[t].rows_for(plans[r].train_ids);
            auto [xte, yte] = tables[t].rows_for(plans[r].test_ids);
            runs[r].x_train[t] = std::move(xtr);
            runs[r].x_test[t] = std::move(xte);
            runs[r].y_train = std::move(ytr);
            runs[r].y_test = std::move(yte);
        }

    // Stage cache keyed by (run, tool, selected indices).
    std::mutex cache_mutex;
    std::map<std::tuple<std::size_t, std::size_t, std::vector<std::size_t>>, std::shared_future<ToolStage>> cache;
    auto stage_for = [&](std::size_t r, std::size_t t, const SelectionResult& sel) -> ToolStage {
        std::promise<ToolStage> promise;
        std::shared_future<ToolStage> fut;
        bool owner = false;
        {
            std::lock_guard lock(cache_mutex);
            auto key = std::make_tuple(r, t, sel.indices);
            auto it = cache.find(key);
            if (it == cache.end()) {
                fut = promise.get_future().share();
                cache.emplace(std::move(key), fut);
                owner = true;
            } else {
                fut = it->second;
            }
        }
        if (owner) {
            try {
                const std::uint64_t grid_seed = derive_seed(cfg.seed, 0x6A1D0000ULL + (r + 1) * 4 + t);
                promise.set_value(train_tool_stage(runs[r].x_train[t], runs[r].y_train, sel, cfg, grid_seed));
            } catch (...) {
                promise.set_exception(std::current_exception());
            }
        }
        ToolStage s = fut.get();
        s.selection = sel;
        return s;
    };

    const std::size_t n_k = cfg.feature_counts.size();
    TrainSummary summary;
    summary.cells.resize(plans.size() * n_k);
    std::mutex log_mutex;
    parallel_for(summary.cells.size(), cfg.workers, [&](std::size_t cell) {
        const std::size_t r = cell / n_k;
        const std::size_t k = cfg.feature_counts[cell % n_k];
        CellOutcome& outcome = summary.cells[cell];
        outcome.run = static_cast<std::size_t>(plans[r].run_index);
        outcome.k = k;
        const fs::path dir = bundle_dir(out, outcome.run, k);
        const auto started = std::chrono::steady_clock::now();
        try {
            fs::remove_all(dir);
            if (on_cell) on_cell(outcome.run, k);
            const RunData& data = runs[r];
            ExperimentBundle bundle;
            bundle.run = outcome.run;
            bundle.k = k;
            bundle.block_size = cfg.block_size;
            bundle.threshold = cfg.threshold;
            bundle.features = cfg.features;

            RealMatrix fusion_in(static_cast<Eigen::Index>(data.y_train.size()), 3);
            for (std::size_t t = 0; t < 3; ++t) {
                const auto sel = select_features(data.x_train[t], data.y_train, k, kTools[t]);
                const ToolStage stage = stage_for(r, t, sel);
                bundle.selections[t] = stage.selection;
                bundle.svms[t] = stage.svm;
                bundle.calibrators[t] = stage.calibration.calibrator;
                for (std::size_t i = 0; i < data.y_train.size(); ++i)
                    fusion_in(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = stage.train_probabilities[i];
            }
            const std::vector<double> targets(data.y_train.begin(), data.y_train.end());
            AnfisModel fis = init_fis(fusion_in, targets, cfg.anfis_radius, cfg.anfis_consequent);
            HybridOptions ho;
            ho.epochs = cfg.anfis_epochs;
            ho.schedule.initial = cfg.anfis_step;
            bundle.anfis = train_hybrid(std::move(fis), fusion_in, targets, ho);

            RunReport report;
            report.run_index = outcome.run;
            report.k = k;
            std::array<std::vector<Label>, kColumnCount> verdicts;
            std::vector<Label> truth;
            for (Eigen::Index i = 0; i < data.x_test[0].rows(); ++i) {
                std::array<std::vector<double>, 3> raw;
                for (std::size_t t = 0; t < 3; ++t) {
                    const auto row = data.x_test[t].row(i);
                    raw[t].assign(row.data(), row.data() + row.size());
                }
                const auto pr = bundle.predict_features(raw);
                for (std::size_t t = 0; t < 3; ++t) verdicts[t].push_back(verdict_from_value(pr.probabilities[t], cfg.threshold).verdict);
                verdicts[kFusedColumn].push_back(pr.fused.verdict);
                truth.push_back(label_from_int(data.y_test[static_cast<std::size_t>(i)]));
            }
            for (std::size_t c = 0; c < kColumnCount; ++c) report.counts[c] = confusion(verdicts[c], truth);
            bundle.report = report;
            bundle.save(dir);
            outcome.ok = true;
            outcome.report = report;
        } catch (const std::exception& e) {
            outcome.ok = false;
            outcome.error = e.what();
            fs::create_directories(dir);
            std::ofstream(dir / "FAILED") << e.what() << '\n';
        }
        if (log) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            std::lock_guard lock(log_mutex);
            std::ostringstream msg;
            msg << cell_name(outcome.run, k) << (outcome.ok ? " ok" : " FAILED: " + outcome.error) << " (" << secs << " s)";
            log(msg.str());
        }
    });
    return summary;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvaluateSummary {
    SummaryTable sensitivity;
    SummaryTable specificity;
    std::size_t reports = 0;
    std::vector<std::string> missing;
};

/// Collects the per-cell reports and writes `<out>/tables/{sensitivity,specificity}.csv`.
/// Cells without a report come out as NA.
inline EvaluateSummary cmd_evaluate(const PipelineConfig& cfg) {
    cfg.validate();
    const fs::path out = resolve_out_dir(cfg);
    std::vector<RunReport> reports;
    EvaluateSummary s;
    for (int run = 1; run <= cfg.runs; ++run)
        for (auto k : cfg.feature_counts) {
            const fs::path path = bundle_dir(out, static_cast<std::size_t>(run), k) / "report.txt";
            std::ifstream f(path);
            if (!f) {
                s.missing.push_back(cell_name(static_cast<std::size_t>(run), k));
                continue;
            }
            reports.push_back(RunReport::read(f));
        }
    s.reports = reports.size();
    s.sensitivity = aggregate_runs(reports, Metric::sensitivity, cfg.aggregation, cfg.feature_counts);
    s.specificity = aggregate_runs(reports, Metric::specificity, cfg.aggregation, cfg.feature_counts);
    fs::create_directories(out / "tables");
    {
        std::ofstream f(out / "tables" / "sensitivity.csv");
        s.sensitivity.write_csv(f);
    }
    {
        std::ofstream f(out / "tables" / "specificity.csv");
        s.specificity.write_csv(f);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

inline PredictResult cmd_predict(const fs::path& bundle, const fs::path& image) {
    const ExperimentBundle b = ExperimentBundle::load(bundle);
    return b.predict(read_gray_image(image));
}

inline void write_prediction(std::ostream& out, const PredictResult& r) {
    for (std::size_t t = 0; t < 3; ++t) out << "p_" << tool_tag(kTools[t]) << ' ' << format_double(r.probabilities[t]) << '\n';
    out << "fused " << format_double(r.fused.value) << '\n'
        << "verdict " << (r.fused.verdict == Label::authentic ? "authentic" : "forged") << '\n';
}

// ---------------------------------------------------------------------------
// Self test
// ---------------------------------------------------------------------------

/// Small end-to-end run on a generated corpus under `scratch`: extract, train,
/// evaluate, then checks table ranges and that a reloaded bundle predicts
/// exactly like the in-memory one. Returns the failed checks (empty on success).
inline std::vector<std::string> run_selftest(const fs::path& scratch, const Logger& log = {}) {
    std::vector<std::string> failures;
    auto check = [&](bool ok, const std::string& what) {
        if (log) log(std::string(ok ? "ok   " : "FAIL ") + what);
        if (!ok) failures.push_back(what);
    };
    fs::remove_all(scratch);
    SyntheticSpec spec;
    spec.authentic = 16;
    spec.spliced = 16;
    spec.size = 32;
    spec.seed = 7;
    write_synthetic_corpus(scratch / "corpus", spec);

    PipelineConfig cfg;
    cfg.dataset = scratch / "corpus";
    cfg.out = scratch / "out";
    cfg.block_size = 32;
    cfg.runs = 2;
    cfg.feature_counts = {10, kAllFeatures};
    cfg.svm_c_log2 = {-1, 5, 3};
    cfg.svm_gamma_log2 = {-7, -1, 3};
    cfg.cv_folds = 3;
    cfg.anfis_epochs = 5;

    const auto ex = cmd_extract(cfg);
    check(ex.blocks == 32, "extract loads every generated block");
    const auto tables = load_feature_tables(cfg.out);
    check(tables[0].values.cols() == 48 && tables[1].values.cols() == 96 && tables[2].values.cols() == 220,
          "feature arities 48/96/220");
    const auto tr = cmd_train(cfg);
    check(tr.cells.size() == 4 && tr.failed() == 0, "all (run, k) cells train");
    const auto ev = cmd_evaluate(cfg);
    bool in_range = true;
    for (const auto* t : {&ev.sensitivity, &ev.specificity})
        for (const auto& row : t->cells)
            for (const auto& v : row) in_range = in_range && v && *v >= 0.0 && *v <= 1.0;
    check(in_range, "every table cell lies in [0,1]");

    const auto dir = bundle_dir(cfg.out, 1, kAllFeatures);
    if (fs::exists(dir / "bundle.txt")) {
        const auto loaded = ExperimentBundle::load(dir);
        const auto corpus = load_corpus(cfg.dataset, cfg.block_size);
        bool same = true;
        for (const auto& b : corpus.blocks) {
            const auto p = loaded.predict(b.pixels());
            const auto q = cmd_predict(dir, cfg.dataset / b.id());
            same = same && p.fused.value == q.fused.value && p.probabilities == q.probabilities;
            same = same && p.fused.verdict == verdict_from_value(p.fused.value, cfg.threshold).verdict;
        }
        check(same, "bundle predictions are reproducible from disk");
    } else {
        check(false, "bundle for run 1, k=All exists");
    }
    return failures;
}

}  // namespace splicefuse
