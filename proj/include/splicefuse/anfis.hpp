#pragma once

#include "splicefuse/core.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace splicefuse {

class AnfisError : public Error {
public:
    using Error::Error;
};

inline constexpr double kMinSigma = 1e-3;

struct GaussianMf {
    double center = 0.0;
    double sigma = 1.0;

    double operator()(double x) const noexcept {
        const double d = (x - center) / sigma;
        return std::exp(-0.5 * d * d);
    }
};

enum class ConsequentType { constant, linear };

inline std::string_view consequent_name(ConsequentType t) { return t == ConsequentType::constant ? "constant" : "linear"; }

inline ConsequentType parse_consequent(std::string_view s) {
    s = trim(s);
    if (s == "constant") return ConsequentType::constant;
    if (s == "linear") return ConsequentType::linear;
    throw FormatError("consequent type must be constant or linear, got '" + std::string(s) + "'");
}

/// Takagi-Sugeno rule: one Gaussian per input and a consequent
/// p0 (constant) or p0 + p1 x1 + ... + pD xD (linear).
struct FuzzyRule {
    std::vector<GaussianMf> mfs;
    std::vector<double> consequent;

    double output(std::span<const double> x) const noexcept {
        double v = consequent[0];
        for (std::size_t d = 1; d < consequent.size(); ++d) v += consequent[d] * x[d - 1];
        return v;
    }
};

struct AnfisModel {
    std::vector<FuzzyRule> rules;
    ConsequentType type = ConsequentType::linear;
    std::size_t inputs = 3;
    // training metadata
    std::size_t epochs = 0;
    double final_rmse = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> epoch_rmse;

    std::size_t consequent_arity() const { return type == ConsequentType::constant ? 1 : inputs + 1; }

    void validate() const {
        if (rules.empty()) throw AnfisError("ANFIS model needs at least one rule");
        for (const auto& r : rules) {
            if (r.mfs.size() != inputs) throw AnfisError("rule has wrong number of membership functions");
            if (r.consequent.size() != consequent_arity()) throw AnfisError("rule consequent arity mismatch");
            for (const auto& mf : r.mfs)
                if (!(mf.sigma > 0.0) || !std::isfinite(mf.center)) throw AnfisError("invalid membership function");
        }
    }

    /// `ANFIS v1 rules=<R> cons=<constant|linear>`, then per rule one
    /// `mf c=<..> sigma=<..>` line per input and one `cons p0 [p1 ...]` line.
    void write(std::ostream& out) const {
        out << "ANFIS v1 rules=" << rules.size() << " cons=" << consequent_name(type) << '\n';
        for (const auto& r : rules) {
            for (const auto& mf : r.mfs)
                out << "mf c=" << format_double(mf.center) << " sigma=" << format_double(mf.sigma) << '\n';
            out << "cons";
            for (double p : r.consequent) out << ' ' << format_double(p);
            out << '\n';
        }
    }

    static AnfisModel read(std::istream& in) {
        std::string line;
        if (!std::getline(in, line) || line.rfind("ANFIS v1 ", 0) != 0) throw FormatError("not an ANFIS v1 file");
        AnfisModel m;
        const auto n_rules = static_cast<std::size_t>(parse_int(token_value(line, "rules")));
        m.type = parse_consequent(token_value(line, "cons"));
        m.rules.resize(n_rules);
        std::size_t inputs = 0;
        for (std::size_t k = 0; k < n_rules; ++k) {
            auto& rule = m.rules[k];
            while (true) {
                if (!std::getline(in, line)) throw FormatError("ANFIS file truncated");
                const auto t = trim(line);
                if (t.rfind("mf ", 0) == 0) {
                    rule.mfs.push_back({parse_double(token_value(t, "c")), parse_double(token_value(t, "sigma"))});
                } else if (t.rfind("cons", 0) == 0) {
                    const auto fields = split(t, ' ');
                    for (std::size_t f = 1; f < fields.size(); ++f) rule.consequent.push_back(parse_double(fields[f]));
                    break;
                } else {
                    throw FormatError("unexpected ANFIS line: " + std::string(t));
                }
            }
            if (k == 0) inputs = rule.mfs.size();
        }
        m.inputs = inputs;
        m.validate();
        return m;
    }
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace detail {

/// Sum of values in ascending order, so the result does not depend on the order
/// the terms were produced in.
inline double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

inline void check_input(const AnfisModel& m, std::span<const double> x) {
    if (x.size() != m.inputs) throw ShapeError("ANFIS input has dimension " + std::to_string(x.size()) + ", expected " +
                                               std::to_string(m.inputs));
}

}  // namespace detail

/// Rule firing strengths scaled by exp(-max log w). Products of Gaussians are
/// taken in the log domain, so the largest entry is exactly 1 and the sum
/// never underflows.
inline std::vector<double> scaled_firing(const AnfisModel& m, std::span<const double> x) {
    detail::check_input(m, x);
    std::vector<double> log_w(m.rules.size());
    for (std::size_t k = 0; k < m.rules.size(); ++k) {
        double lw = 0.0;
        for (std::size_t d = 0; d < m.inputs; ++d) {
            const double z = (x[d] - m.rules[k].mfs[d].center) / m.rules[k].mfs[d].sigma;
            lw -= 0.5 * z * z;
        }
        log_w[k] = lw;
    }
    const double top = *std::max_element(log_w.begin(), log_w.end());
    for (double& v : log_w) v = std::exp(v - top);
    return log_w;
}

/// w_k / sum_j w_j.
inline std::vector<double> normalized_firing(const AnfisModel& m, std::span<const double> x) {
    auto w = scaled_firing(m, x);
    std::vector<double> terms = w;
    const double total = detail::sorted_sum(terms);
    for (double& v : w) v /= total;
    return w;
}

/// Weighted average of the rule consequents.
inline double fis_eval(const AnfisModel& m, std::span<const double> x) {
    const auto w = scaled_firing(m, x);
    std::vector<double> num(w.size()), den = w;
    for (std::size_t k = 0; k < w.size(); ++k) num[k] = w[k] * m.rules[k].output(x);
    const double numerator = detail::sorted_sum(num);
    return numerator / detail::sorted_sum(den);
}

struct FusedVerdict {
    Label verdict = Label::forged;
    double value = 0.0;
};

/// Authentic iff the fused value is strictly greater than the threshold.
inline FusedVerdict verdict_from_value(double value, double threshold = 0.5) {
    return {value > threshold ? Label::authentic : Label::forged, value};
}

inline FusedVerdict fused_verdict(const AnfisModel& m, std::span<const double> scores, double threshold = 0.5) {
    return verdict_from_value(fis_eval(m, scores), threshold);
}

inline double rmse(const AnfisModel& m, const RealMatrix& inputs, std::span<const double> targets) {
    if (static_cast<std::size_t>(inputs.rows()) != targets.size()) throw ShapeError("rmse: row count mismatch");
    double ss = 0.0;
    std::vector<double> row(inputs.cols());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        for (Eigen::Index d = 0; d < inputs.cols(); ++d) row[d] = inputs(i, d);
        const double e = fis_eval(m, row) - targets[i];
        ss += e * e;
    }
    return std::sqrt(ss / static_cast<double>(targets.size()));
}

// ---------------------------------------------------------------------------
// Rule generation
// ---------------------------------------------------------------------------

struct SubtractiveClusterOptions {
    double squash_factor = 1.5;
    double accept_ratio = 0.5;
    double reject_ratio = 0.15;
};

/// Subtractive clustering on the rows of `points`. Potentials use
/// exp(-4 |x_i - x_j|^2 / r^2); each accepted center subtracts its influence
/// with radius squash_factor * r. Returns at least one center.
inline RealMatrix subtractive_cluster(const RealMatrix& points, double radius, const SubtractiveClusterOptions& opt = {}) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (n == 0) throw AnfisError("subtractive_cluster: no points");
    if (!(radius > 0.0)) throw AnfisError("subtractive_cluster: radius must be positive");
    const double alpha = 4.0 / (radius * radius);
    const double rb = opt.squash_factor * radius;
    const double beta = 4.0 / (rb * rb);

    std::vector<double> potential(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) potential[i] += std::exp(-alpha * (points.row(i) - points.row(j)).squaredNorm());

    auto argmax = [&] {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (potential[i] > potential[best]) best = i;
        return best;
    };

    std::vector<std::size_t> centers;
    std::size_t k = argmax();
    const double first = potential[k];
    auto accept = [&](std::size_t c) {
        centers.push_back(c);
        const double pc = potential[c];
        for (std::size_t i = 0; i < n; ++i)
            potential[i] -= pc * std::exp(-beta * (points.row(i) - points.row(c)).squaredNorm());
        potential[c] = 0.0;
    };
    accept(k);
    while (first > 0.0) {
        k = argmax();
        const double p = potential[k];
        if (p > opt.accept_ratio * first) {
            accept(k);
        } else if (p < opt.reject_ratio * first) {
            break;
        } else {
            double dmin = std::numeric_limits<double>::infinity();
            for (std::size_t c : centers) dmin = std::min(dmin, (points.row(k) - points.row(c)).norm());
            if (dmin / radius + p / first >= 1.0) {
                accept(k);
            } else {
                potential[k] = 0.0;  // rejected; try the next highest
            }
        }
    }
    RealMatrix out(static_cast<Eigen::Index>(centers.size()), points.cols());
    for (std::size_t c = 0; c < centers.size(); ++c) out.row(static_cast<Eigen::Index>(c)) = points.row(centers[c]);
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

inline constexpr double kLeastSquaresRidge = 1e-8;

/// Design matrix of the consequent least-squares problem for fixed premises.
inline Eigen::MatrixXd consequent_design(const AnfisModel& m, const RealMatrix& inputs) {
    const std::size_t arity = m.consequent_arity();
    Eigen::MatrixXd phi(inputs.rows(), static_cast<Eigen::Index>(m.rules.size() * arity));
    std::vector<double> row(inputs.cols());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        for (Eigen::Index d = 0; d < inputs.cols(); ++d) row[d] = inputs(i, d);
        const auto w = normalized_firing(m, row);
        for (std::size_t k = 0; k < m.rules.size(); ++k) {
            const auto base = static_cast<Eigen::Index>(k * arity);
            phi(i, base) = w[k];
            for (std::size_t a = 1; a < arity; ++a) phi(i, base + static_cast<Eigen::Index>(a)) = w[k] * row[a - 1];
        }
    }
    return phi;
}

/// Global least squares for all consequent parameters with the premises held
/// fixed. Normal equations with a 1e-8 ridge, followed by iterative refinement
/// so that full-rank problems recover the unregularized solution.
inline void solve_consequents(AnfisModel& m, const RealMatrix& inputs, std::span<const double> targets) {
    const Eigen::MatrixXd phi = consequent_design(m, inputs);
    const Eigen::Map<const Eigen::VectorXd> y(targets.data(), static_cast<Eigen::Index>(targets.size()));
    const Eigen::MatrixXd ata = phi.transpose() * phi;
    const Eigen::VectorXd atb = phi.transpose() * y;
    Eigen::MatrixXd reg = ata;
    reg.diagonal().array() += kLeastSquaresRidge;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
    Eigen::VectorXd theta = ldlt.solve(atb);
    for (int refine = 0; refine < 3; ++refine) theta += ldlt.solve(atb - ata * theta);
    if (!theta.allFinite()) throw AnfisError("consequent least squares produced non-finite parameters");
    const std::size_t arity = m.consequent_arity();
    for (std::size_t k = 0; k < m.rules.size(); ++k)
        for (std::size_t a = 0; a < arity; ++a) m.rules[k].consequent[a] = theta(static_cast<Eigen::Index>(k * arity + a));
}

/// Gradient of E = 1/(2n) sum (o - y)^2 with respect to the premise
/// parameters, laid out rule-major as (dc_1, dsigma_1, dc_2, dsigma_2, ...).
inline std::vector<double> premise_gradient(const AnfisModel& m, const RealMatrix& inputs, std::span<const double> targets) {
    const std::size_t D = m.inputs;
    std::vector<double> grad(m.rules.size() * D * 2, 0.0);
    std::vector<double> row(D);
    const auto n = static_cast<double>(targets.size());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        for (std::size_t d = 0; d < D; ++d) row[d] = inputs(i, static_cast<Eigen::Index>(d));
        const auto w = normalized_firing(m, row);
        double o = 0.0;
        std::vector<double> f(m.rules.size());
        for (std::size_t k = 0; k < m.rules.size(); ++k) {
            f[k] = m.rules[k].output(row);
            o += w[k] * f[k];
        }
        const double err = (o - targets[i]) / n;
        for (std::size_t k = 0; k < m.rules.size(); ++k) {
            const double common = err * w[k] * (f[k] - o);
            for (std::size_t d = 0; d < D; ++d) {
                const auto& mf = m.rules[k].mfs[d];
                const double diff = row[d] - mf.center;
                const double s2 = mf.sigma * mf.sigma;
                grad[(k * D + d) * 2] += common * diff / s2;
                grad[(k * D + d) * 2 + 1] += common * diff * diff / (s2 * mf.sigma);
            }
        }
    }
    return grad;
}

/// d RMSE / d premise, same layout as premise_gradient.
inline std::vector<double> rmse_gradient(const AnfisModel& m, const RealMatrix& inputs, std::span<const double> targets) {
    auto g = premise_gradient(m, inputs, targets);
    const double r = rmse(m, inputs, targets);
    for (double& v : g) v = r > 0.0 ? v / r : 0.0;
    return g;
}

inline std::vector<double> premise_parameters(const AnfisModel& m) {
    std::vector<double> p;
    for (const auto& r : m.rules)
        for (const auto& mf : r.mfs) {
            p.push_back(mf.center);
            p.push_back(mf.sigma);
        }
    return p;
}

inline void set_premise_parameters(AnfisModel& m, std::span<const double> p) {
    std::size_t at = 0;
    for (auto& r : m.rules)
        for (auto& mf : r.mfs) {
            mf.center = p[at++];
            mf.sigma = std::max(p[at++], kMinSigma);
        }
}

/// Premise step length schedule: normalized gradient steps of length `initial`,
/// grown by `increase` after four consecutive RMSE decreases and shrunk by
/// `decrease` after two consecutive up/down oscillations.
struct StepSchedule {
    double initial = 0.01;
    double increase = 1.1;
    double decrease = 0.9;
};

struct HybridOptions {
    std::size_t epochs = 50;
    StepSchedule schedule;
};

struct HybridDiagnostics {
    std::vector<double> rmse_before_ls;  // with the previous consequents, new premises
    std::vector<double> rmse_after_ls;
    std::size_t skipped_epochs = 0;
};

/// Hybrid learning. Each epoch solves the consequents by least squares for the
/// current premises, then takes one gradient step on all centers and widths.
/// A step that makes the error non-finite is halved up to ten times, after
/// which the epoch's premise update is skipped. Returns the epoch snapshot
/// with the lowest training RMSE.
inline AnfisModel train_hybrid(AnfisModel model, const RealMatrix& inputs, std::span<const double> targets,
                               const HybridOptions& opt = {}, HybridDiagnostics* diag = nullptr) {
    model.validate();
    if (static_cast<std::size_t>(inputs.cols()) != model.inputs) throw ShapeError("train_hybrid: input dimension mismatch");
    if (static_cast<std::size_t>(inputs.rows()) != targets.size()) throw ShapeError("train_hybrid: row count mismatch");
    if (targets.size() < model.rules.size() * model.consequent_arity())
        throw AnfisError("train_hybrid: need at least " + std::to_string(model.rules.size() * model.consequent_arity()) +
                         " rows for " + std::to_string(model.rules.size()) + " rules");

    AnfisModel best = model;
    double best_rmse = std::numeric_limits<double>::infinity();
    double step = opt.schedule.initial;
    std::vector<double> history;
    model.epoch_rmse.clear();
    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        const double before = rmse(model, inputs, targets);
        solve_consequents(model, inputs, targets);
        const double after = rmse(model, inputs, targets);
        if (diag) {
            diag->rmse_before_ls.push_back(before);
            diag->rmse_after_ls.push_back(after);
        }
        model.epoch_rmse.push_back(after);
        history.push_back(after);
        if (after < best_rmse) {
            best_rmse = after;
            best = model;
            best.epochs = epoch;
        }
        if (epoch == opt.epochs) break;

        // step-size adaptation on the error history
        const std::size_t h = history.size();
        if (h >= 5 && history[h - 5] > history[h - 4] && history[h - 4] > history[h - 3] &&
            history[h - 3] > history[h - 2] && history[h - 2] > history[h - 1])
            step *= opt.schedule.increase;
        if (h >= 5 && history[h - 5] < history[h - 4] && history[h - 4] > history[h - 3] &&
            history[h - 3] < history[h - 2] && history[h - 2] > history[h - 1])
            step *= opt.schedule.decrease;

        const auto grad = premise_gradient(model, inputs, targets);
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (!(norm > 1e-14) || !std::isfinite(norm)) continue;  // at a stationary point
        const auto params = premise_parameters(model);
        bool applied = false;
        double trial_step = step;
        for (int attempt = 0; attempt <= 10; ++attempt, trial_step *= 0.5) {
            std::vector<double> next(params.size());
            for (std::size_t p = 0; p < params.size(); ++p) next[p] = params[p] - trial_step * grad[p] / norm;
            AnfisModel trial = model;
            set_premise_parameters(trial, next);
            if (std::isfinite(rmse(trial, inputs, targets))) {
                model = std::move(trial);
                applied = true;
                break;
            }
        }
        if (!applied && diag) ++diag->skipped_epochs;
    }
    best.epoch_rmse = model.epoch_rmse;
    best.final_rmse = best_rmse;
    return best;
}

/// One rule per subtractive-clustering center of the rows [inputs | target].
/// Widths are radius * (max - min of the input) / sqrt(8), floored at 1e-3.
/// Consequents start from the least-squares solution for these premises.
inline AnfisModel init_fis(const RealMatrix& inputs, std::span<const double> targets, double radius,
                           ConsequentType type = ConsequentType::linear, const SubtractiveClusterOptions& opt = {}) {
    if (inputs.rows() == 0) throw AnfisError("init_fis: no training rows");
    if (static_cast<std::size_t>(inputs.rows()) != targets.size()) throw ShapeError("init_fis: row count mismatch");
    const auto D = static_cast<std::size_t>(inputs.cols());
    RealMatrix points(inputs.rows(), inputs.cols() + 1);
    points.leftCols(inputs.cols()) = inputs;
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) points(i, inputs.cols()) = targets[i];
    const RealMatrix centers = subtractive_cluster(points, radius, opt);

    AnfisModel m;
    m.type = type;
    m.inputs = D;
    std::vector<double> sigma(D);
    for (std::size_t d = 0; d < D; ++d) {
        const auto col = inputs.col(static_cast<Eigen::Index>(d));
        sigma[d] = std::max(radius * (col.maxCoeff() - col.minCoeff()) / std::sqrt(8.0), kMinSigma);
    }
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
        FuzzyRule r;
        for (std::size_t d = 0; d < D; ++d) r.mfs.push_back({centers(c, static_cast<Eigen::Index>(d)), sigma[d]});
        r.consequent.assign(m.consequent_arity(), 0.0);
        m.rules.push_back(std::move(r));
    }
    if (targets.size() >= m.rules.size() * m.consequent_arity()) solve_consequents(m, inputs, targets);
    return m;
}

}  // namespace splicefuse
