#pragma once

#include "splicefuse/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace splicefuse {

class SvmError : public Error {
public:
    using Error::Error;
};

/// Raised when SMO hits its iteration cap; carries the remaining KKT gap.
class SvmConvergenceError : public SvmError {
public:
    SvmConvergenceError(long long iterations, double violation)
        : SvmError("SMO did not converge after " + std::to_string(iterations) + " iterations (worst violation " +
                   format_double(violation) + ")"),
          worst_violation(violation) {}
    double worst_violation;
};

struct KernelParams {
    double C = 1.0;
    double gamma = 1.0;

    void validate() const {
        if (!(C > 0.0 && std::isfinite(C)) || !(gamma > 0.0 && std::isfinite(gamma)))
            throw SvmError("kernel parameters must be positive and finite (C=" + format_double(C) +
                           ", gamma=" + format_double(gamma) + ")");
    }
};

inline double rbf_kernel(std::span<const double> x, std::span<const double> z, double gamma) {
    if (x.size() != z.size()) throw ShapeError("rbf_kernel: dimension mismatch");
    if (!(gamma > 0.0)) throw SvmError("rbf_kernel: gamma must be positive");
    double d2 = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - z[k];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

/// Per-feature min/max scaling to [0,1] learned from training rows. A
/// constant training feature maps to 0.
struct FeatureScaling {
    std::vector<double> min;
    std::vector<double> max;

    static FeatureScaling fit(const RealMatrix& x) {
        FeatureScaling s;
        s.min.resize(x.cols());
        s.max.resize(x.cols());
        for (Eigen::Index f = 0; f < x.cols(); ++f) {
            s.min[f] = x.rows() ? x.col(f).minCoeff() : 0.0;
            s.max[f] = x.rows() ? x.col(f).maxCoeff() : 0.0;
        }
        return s;
    }

    std::size_t dim() const { return min.size(); }

    double apply(std::size_t f, double v) const {
        const double range = max[f] - min[f];
        return range > 0.0 ? (v - min[f]) / range : 0.0;
    }

    RealMatrix apply(const RealMatrix& x) const {
        if (static_cast<std::size_t>(x.cols()) != dim()) throw ShapeError("scaling: dimension mismatch");
        RealMatrix out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index f = 0; f < x.cols(); ++f) out(i, f) = apply(static_cast<std::size_t>(f), x(i, f));
        return out;
    }
};

struct SmoOptions {
    double tol = 1e-3;
    long long max_iterations = 10'000'000;
    /// Recompute the dual objective after every step and throw if it decreases.
    bool check_monotone = false;
};

/// Solution of the C-SVC dual on a precomputed kernel matrix.
struct DualSolution {
    std::vector<double> alpha;
    double bias = 0.0;  // f(x) = sum alpha_i y_i K(x_i, x) + bias
    long long iterations = 0;
    double objective = 0.0;  // sum alpha - 1/2 alpha^T Q alpha
};

/// Squared Euclidean distances between all row pairs.
inline Eigen::MatrixXd squared_distances(const RealMatrix& x) {
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = -2.0 * (x * x.transpose());
    d.colwise() += norms;
    d.rowwise() += norms.transpose();
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = std::max(0.0, 0.5 * (d(i, j) + d(j, i)));
            d(i, j) = d(j, i) = v;
        }
    }
    return d;
}

inline Eigen::MatrixXd rbf_gram(const Eigen::MatrixXd& sq_dist, double gamma) { return (-gamma * sq_dist.array()).exp(); }

/// SMO with second-order working-set selection (maximal-gain pair) for
///   min 1/2 a^T Q a - e^T a,  0 <= a_i <= C,  y^T a = 0,  Q_ij = y_i y_j K_ij.
/// Stops when the maximal KKT violation m(a) - M(a) drops below tol.
inline DualSolution solve_dual(const Eigen::MatrixXd& K, std::span<const int> y, double C, const SmoOptions& opt = {}) {
    const auto n = static_cast<std::size_t>(K.rows());
    if (static_cast<std::size_t>(K.cols()) != n || y.size() != n) throw ShapeError("solve_dual: shape mismatch");
    constexpr double kTau = 1e-12;

    std::vector<double> alpha(n, 0.0), grad(n, -1.0);
    auto objective = [&] {
        // f(a) = 1/2 sum a_i (G_i - 1); the dual objective is -f
        double f = 0;
        for (std::size_t t = 0; t < n; ++t) f += alpha[t] * (grad[t] - 1.0);
        return -0.5 * f;
    };
    auto in_up = [&](std::size_t t) { return y[t] > 0 ? alpha[t] < C : alpha[t] > 0.0; };
    auto in_low = [&](std::size_t t) { return y[t] > 0 ? alpha[t] > 0.0 : alpha[t] < C; };

    double last_obj = 0.0;
    long long iter = 0;
    double gap = 0.0;
    while (true) {
        double gmax = -std::numeric_limits<double>::infinity();
        std::size_t i = n;
        for (std::size_t t = 0; t < n; ++t) {
            if (!in_up(t)) continue;
            const double v = -y[t] * grad[t];
            if (v >= gmax) {
                gmax = v;
                i = t;
            }
        }
        double gmax2 = -std::numeric_limits<double>::infinity();
        std::size_t j = n;
        double obj_min = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < n; ++t) {
            if (!in_low(t)) continue;
            const double v = y[t] * grad[t];  // -(-y_t G_t)
            gmax2 = std::max(gmax2, v);
            if (i == n) continue;
            const double b = gmax + v;
            if (b > 0.0) {
                double a = K(i, i) + K(t, t) - 2.0 * K(i, t);
                if (a <= 0.0) a = kTau;
                const double gain = -(b * b) / a;
                if (gain <= obj_min) {
                    obj_min = gain;
                    j = t;
                }
            }
        }
        gap = gmax + gmax2;
        if (i == n || j == n || gap < opt.tol) break;
        if (iter >= opt.max_iterations) throw SvmConvergenceError(iter, gap);
        ++iter;

        const double old_ai = alpha[i], old_aj = alpha[j];
        if (y[i] != y[j]) {
            double quad = K(i, i) + K(j, j) - 2.0 * K(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0.0) {
                if (alpha[j] < 0.0) {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if (diff > 0.0) {
                if (alpha[i] > C) {
                    alpha[i] = C;
                    alpha[j] = C - diff;
                }
            } else if (alpha[j] > C) {
                alpha[j] = C;
                alpha[i] = C + diff;
            }
        } else {
            double quad = K(i, i) + K(j, j) - 2.0 * K(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > C) {
                if (alpha[i] > C) {
                    alpha[i] = C;
                    alpha[j] = sum - C;
                }
            } else if (alpha[j] < 0.0) {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if (sum > C) {
                if (alpha[j] > C) {
                    alpha[j] = C;
                    alpha[i] = sum - C;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        const double di = (alpha[i] - old_ai) * y[i], dj = (alpha[j] - old_aj) * y[j];
        for (std::size_t t = 0; t < n; ++t) grad[t] += y[t] * (K(t, i) * di + K(t, j) * dj);

        if (opt.check_monotone) {
            const double obj = objective();
            if (obj < last_obj - 1e-12 * std::max(1.0, std::abs(last_obj)))
                throw SvmError("SMO dual objective decreased at iteration " + std::to_string(iter));
            last_obj = obj;
        }
    }

    // bias: average over free vectors, else midpoint of the feasible interval
    double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
    double sum_free = 0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (alpha[t] >= C) {
            if (y[t] < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (alpha[t] <= 0.0) {
            if (y[t] > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++n_free;
            sum_free += yg;
        }
    }
    const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
    DualSolution sol;
    sol.objective = objective();
    sol.alpha = std::move(alpha);
    sol.bias = -rho;
    sol.iterations = iter;
    return sol;
}

/// Trained binary RBF classifier. Support vectors are stored already scaled;
/// decision_value takes raw feature rows and applies the stored scaling.
struct SvmModel {
    KernelParams params;
    FeatureScaling scaling;
    RealMatrix support_vectors;
    std::vector<double> coef;  // alpha_i * y_i
    double bias = 0.0;

    std::size_t dim() const { return scaling.dim(); }

    double decision_value_scaled(std::span<const double> x) const {
        double f = bias;
        for (Eigen::Index s = 0; s < support_vectors.rows(); ++s) {
            double d2 = 0;
            for (Eigen::Index k = 0; k < support_vectors.cols(); ++k) {
                const double d = support_vectors(s, k) - x[k];
                d2 += d * d;
            }
            f += coef[s] * std::exp(-params.gamma * d2);
        }
        return f;
    }

    /// Writes `SVMMODEL v1 ...` followed by one `alpha_y v0 v1 ...` line per support vector.
    void write(std::ostream& out) const {
        out << "SVMMODEL v1 C=" << format_double(params.C) << " gamma=" << format_double(params.gamma)
            << " dim=" << dim() << " nsv=" << support_vectors.rows() << " b=" << format_double(bias) << " scale=";
        for (std::size_t f = 0; f < dim(); ++f)
            out << (f ? "," : "") << format_double(scaling.min[f]) << ',' << format_double(scaling.max[f]);
        out << '\n';
        for (Eigen::Index s = 0; s < support_vectors.rows(); ++s) {
            out << format_double(coef[s]);
            for (Eigen::Index k = 0; k < support_vectors.cols(); ++k) out << ' ' << format_double(support_vectors(s, k));
            out << '\n';
        }
    }

    static SvmModel read(std::istream& in) {
        std::string header;
        if (!std::getline(in, header) || header.rfind("SVMMODEL v1 ", 0) != 0) throw FormatError("not an SVMMODEL v1 file");
        SvmModel m;
        m.params.C = parse_double(token_value(header, "C"));
        m.params.gamma = parse_double(token_value(header, "gamma"));
        const auto dim = static_cast<std::size_t>(parse_int(token_value(header, "dim")));
        const auto nsv = static_cast<Eigen::Index>(parse_int(token_value(header, "nsv")));
        m.bias = parse_double(token_value(header, "b"));
        const auto scale = token_value(header, "scale");
        const auto parts = dim ? split(scale, ',') : std::vector<std::string_view>{};
        if (parts.size() != 2 * dim) throw FormatError("SVMMODEL scale has wrong length");
        for (std::size_t f = 0; f < dim; ++f) {
            m.scaling.min.push_back(parse_double(parts[2 * f]));
            m.scaling.max.push_back(parse_double(parts[2 * f + 1]));
        }
        m.support_vectors.resize(nsv, static_cast<Eigen::Index>(dim));
        m.coef.resize(nsv);
        std::string line;
        for (Eigen::Index s = 0; s < nsv; ++s) {
            if (!std::getline(in, line)) throw FormatError("SVMMODEL truncated");
            const auto fields = split(trim(line), ' ');
            if (fields.size() != dim + 1) throw FormatError("SVMMODEL support vector has wrong arity");
            m.coef[s] = parse_double(fields[0]);
            for (std::size_t k = 0; k < dim; ++k) m.support_vectors(s, k) = parse_double(fields[k + 1]);
        }
        m.params.validate();
        return m;
    }
};

/// f(x) = sum alpha_i y_i K(s_i, x) + b on a raw (unscaled) feature row.
inline double decision_value(const SvmModel& model, std::span<const double> x) {
    if (x.size() != model.dim()) throw ShapeError("decision_value: expected dimension " + std::to_string(model.dim()));
    std::vector<double> scaled(x.size());
    for (std::size_t f = 0; f < x.size(); ++f) scaled[f] = model.scaling.apply(f, x[f]);
    return model.decision_value_scaled(scaled);
}

inline std::vector<double> decision_values(const SvmModel& model, const RealMatrix& x) {
    std::vector<double> out(x.rows());
    std::vector<double> row(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index k = 0; k < x.cols(); ++k) row[k] = x(i, k);
        out[i] = decision_value(model, row);
    }
    return out;
}

/// Labels {0,1} -> {-1,+1}; authentic (1) is +1.
inline std::vector<int> signed_labels(std::span<const int> labels) {
    std::vector<int> y(labels.size());
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw SvmError("labels must be 0 or 1");
        y[i] = labels[i] ? 1 : -1;
        (labels[i] ? pos : neg) = true;
    }
    if (!pos || !neg) throw SvmError("degenerate training set: only one class present");
    return y;
}

namespace detail {

inline SvmModel assemble_model(const RealMatrix& scaled, std::span<const int> y, const DualSolution& sol,
                               KernelParams params, FeatureScaling scaling) {
    SvmModel m;
    m.params = params;
    m.scaling = std::move(scaling);
    m.bias = sol.bias;
    std::vector<Eigen::Index> sv;
    for (std::size_t i = 0; i < sol.alpha.size(); ++i)
        if (sol.alpha[i] > 0.0) sv.push_back(static_cast<Eigen::Index>(i));
    m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), scaled.cols());
    m.coef.resize(sv.size());
    for (std::size_t s = 0; s < sv.size(); ++s) {
        m.support_vectors.row(static_cast<Eigen::Index>(s)) = scaled.row(sv[s]);
        m.coef[s] = sol.alpha[sv[s]] * y[sv[s]];
    }
    return m;
}

}  // namespace detail

/// Fits the scaling on `features`, then solves the RBF C-SVC dual with SMO.
/// `seed` is accepted for interface stability; the solver is deterministic.
inline SvmModel train_svm(const RealMatrix& features, std::span<const int> labels, KernelParams params,
                          double tol = 1e-3, std::uint64_t seed = 0, DualSolution* solution_out = nullptr) {
    (void)seed;
    params.validate();
    if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("train_svm: label count mismatch");
    const auto y = signed_labels(labels);
    FeatureScaling scaling = FeatureScaling::fit(features);
    const RealMatrix scaled = scaling.apply(features);
    const Eigen::MatrixXd K = rbf_gram(squared_distances(scaled), params.gamma);
    SmoOptions opt;
    opt.tol = tol;
    DualSolution sol = solve_dual(K, y, params.C, opt);
    SvmModel model = detail::assemble_model(scaled, y, sol, params, std::move(scaling));
    if (solution_out) *solution_out = std::move(sol);
    return model;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridCell {
    double C = 0;
    double gamma = 0;
    double accuracy = 0;
    bool failed = false;
    std::string error;
};

struct GridSearchReport {
    std::vector<GridCell> cells;  // C-major: cells[c * |gamma grid| + g]
    std::size_t chosen = 0;

    KernelParams best() const { return {cells.at(chosen).C, cells.at(chosen).gamma}; }
};

/// Powers of two 2^lo, 2^(lo+step), ..., up to 2^hi.
inline std::vector<double> pow2_grid(int lo, int hi, int step) {
    if (step <= 0) throw SvmError("grid step must be positive");
    std::vector<double> g;
    for (int e = lo; e <= hi; e += step) g.push_back(std::ldexp(1.0, e));
    return g;
}

inline std::vector<double> default_c_grid() { return pow2_grid(-5, 15, 2); }
inline std::vector<double> default_gamma_grid() { return pow2_grid(-15, 3, 2); }

/// Fold index per sample: each class is shuffled and dealt round-robin.
inline std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
    std::vector<int> assignment(labels.size(), 0);
    std::mt19937_64 rng(derive_seed(seed, 0xF01D));
    int next = 0;
    for (int cls : {1, 0}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) members.push_back(i);
        shuffle(std::span(members), rng);
        for (std::size_t i : members) {
            assignment[i] = next;
            next = (next + 1) % folds;
        }
    }
    return assignment;
}

/// Runs fn(0..count-1) on up to `workers` threads.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct GridSearchOptions {
    int folds = 5;
    double tol = 1e-3;
    long long max_iterations = 10'000'000;
    int workers = 1;
};

/// Stratified k-fold cross-validated accuracy for every (C, gamma). Features are
/// scaled once with the min/max of all supplied rows. A cell whose training
/// throws scores 0 and is flagged. Best cell: highest accuracy, then smaller C,
/// then smaller gamma.
inline GridSearchReport grid_search(const RealMatrix& features, std::span<const int> labels,
                                    const std::vector<double>& c_grid, const std::vector<double>& gamma_grid,
                                    std::uint64_t seed, const GridSearchOptions& opt = {}) {
    if (c_grid.empty() || gamma_grid.empty()) throw SvmError("grid_search: empty grid");
    if (opt.folds < 2) throw SvmError("grid_search: folds must be >= 2");
    if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("grid_search: label count mismatch");
    const auto y = signed_labels(labels);
    const auto n = labels.size();
    const RealMatrix scaled = FeatureScaling::fit(features).apply(features);
    const Eigen::MatrixXd sq = squared_distances(scaled);
    const auto fold_of = stratified_folds(labels, opt.folds, seed);

    GridSearchReport report;
    report.cells.resize(c_grid.size() * gamma_grid.size());
    std::vector<std::size_t> correct(report.cells.size(), 0);

    parallel_for(gamma_grid.size(), opt.workers, [&](std::size_t g) {
        const double gamma = gamma_grid[g];
        const Eigen::MatrixXd K = rbf_gram(sq, gamma);
        std::vector<std::size_t> right(c_grid.size(), 0);
        std::vector<std::string> errors(c_grid.size());
        for (int fold = 0; fold < opt.folds; ++fold) {
            std::vector<Eigen::Index> tr, te;
            for (std::size_t i = 0; i < n; ++i) (fold_of[i] == fold ? te : tr).push_back(static_cast<Eigen::Index>(i));
            if (te.empty()) continue;
            const Eigen::MatrixXd K_tr = K(tr, tr);
            std::vector<int> y_tr(tr.size());
            for (std::size_t a = 0; a < tr.size(); ++a) y_tr[a] = y[tr[a]];
            for (std::size_t c = 0; c < c_grid.size(); ++c) {
                if (!errors[c].empty()) continue;
                try {
                    bool pos = false, neg = false;
                    for (int v : y_tr) (v > 0 ? pos : neg) = true;
                    if (!pos || !neg) throw SvmError("degenerate training fold: only one class present");
                    SmoOptions so;
                    so.tol = opt.tol;
                    so.max_iterations = opt.max_iterations;
                    const DualSolution sol = solve_dual(K_tr, y_tr, c_grid[c], so);
                    for (Eigen::Index t : te) {
                        double f = sol.bias;
                        for (std::size_t a = 0; a < tr.size(); ++a)
                            if (sol.alpha[a] > 0.0) f += sol.alpha[a] * y_tr[a] * K(t, tr[a]);
                        // f == 0 votes forged, matching the strict authentic threshold
                        if ((f > 0.0 ? 1 : -1) == y[t]) ++right[c];
                    }
                } catch (const Error& e) {
                    errors[c] = e.what();
                }
            }
        }
        for (std::size_t c = 0; c < c_grid.size(); ++c) {
            GridCell& cell = report.cells[c * gamma_grid.size() + g];
            cell.C = c_grid[c];
            cell.gamma = gamma;
            cell.failed = !errors[c].empty();
            cell.error = errors[c];
            correct[c * gamma_grid.size() + g] = cell.failed ? 0 : right[c];
            cell.accuracy = static_cast<double>(correct[c * gamma_grid.size() + g]) / static_cast<double>(n);
        }
    });

    std::size_t best = 0;
    for (std::size_t k = 1; k < report.cells.size(); ++k) {
        const auto& a = report.cells[k];
        const auto& b = report.cells[best];
        if (correct[k] > correct[best] || (correct[k] == correct[best] && (a.C < b.C || (a.C == b.C && a.gamma < b.gamma))))
            best = k;
    }
    report.chosen = best;
    return report;
}

}  // namespace splicefuse
