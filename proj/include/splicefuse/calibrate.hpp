#pragma once

#include "splicefuse/core.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>

namespace splicefuse {

class CalibrationError : public Error {
public:
    using Error::Error;
};

/// p(f) = 1 / (1 + exp(A f + B)).
struct SigmoidCalibrator {
    double A = 0.0;
    double B = 0.0;

    /// Evaluated on the stable branch for the sign of A f + B. The result is
    /// clamped to the open interval representable in double precision.
    double operator()(double f) const noexcept {
        const double t = A * f + B;
        const double p = t >= 0.0 ? std::exp(-t) / (1.0 + std::exp(-t)) : 1.0 / (1.0 + std::exp(t));
        return std::clamp(p, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
    }
};

inline double sigmoid(const SigmoidCalibrator& c, double f) noexcept { return c(f); }

/// Platt's smoothed targets: (N+ + 1)/(N+ + 2) for label 1, 1/(N- + 2) for label 0.
struct PlattTargets {
    double positive = 0.0;
    double negative = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

inline PlattTargets platt_targets(std::span<const int> labels) {
    PlattTargets t;
    for (int y : labels) {
        if (y != 0 && y != 1) throw CalibrationError("labels must be 0 or 1");
        (y ? t.n_pos : t.n_neg)++;
    }
    t.positive = (static_cast<double>(t.n_pos) + 1.0) / (static_cast<double>(t.n_pos) + 2.0);
    t.negative = 1.0 / (static_cast<double>(t.n_neg) + 2.0);
    return t;
}

namespace detail {
inline double softplus(double t) noexcept { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
}  // namespace detail

/// Cross-entropy of the calibrator against the smoothed targets.
inline double platt_loss(const SigmoidCalibrator& c, std::span<const double> values, std::span<const int> labels) {
    const PlattTargets tg = platt_targets(labels);
    double loss = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double t = c.A * values[i] + c.B;
        const double target = labels[i] ? tg.positive : tg.negative;
        // -log p = softplus(t), -log(1-p) = softplus(-t)
        loss += target * detail::softplus(t) + (1.0 - target) * detail::softplus(-t);
    }
    return loss;
}

struct SigmoidFit {
    SigmoidCalibrator calibrator;
    bool converged = false;
    int iterations = 0;
    double loss = 0.0;
};

/// Newton's method with backtracking on the Platt likelihood, started from the
/// prior-only point (0, log((N- + 1)/(N+ + 1))). Converged when the gradient's
/// infinity norm falls below 1e-10; otherwise the best iterate after
/// `max_iterations` comes back with converged = false.
inline SigmoidFit fit_sigmoid(std::span<const double> values, std::span<const int> labels, int max_iterations = 200) {
    if (values.size() != labels.size()) throw ShapeError("fit_sigmoid: length mismatch");
    const PlattTargets tg = platt_targets(labels);
    if (tg.n_pos == 0 || tg.n_neg == 0) throw CalibrationError("fit_sigmoid: both classes must be present");
    constexpr double kGradTol = 1e-10;
    constexpr double kMinStep = 1e-10;
    constexpr double kHessRidge = 1e-12;

    SigmoidCalibrator c{0.0, std::log((static_cast<double>(tg.n_neg) + 1.0) / (static_cast<double>(tg.n_pos) + 1.0))};
    double loss = platt_loss(c, values, labels);
    SigmoidFit fit;
    for (int it = 0; it < max_iterations; ++it) {
        double h11 = kHessRidge, h22 = kHessRidge, h21 = 0, g1 = 0, g2 = 0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double f = values[i];
            const double p = c(f);
            const double target = labels[i] ? tg.positive : tg.negative;
            const double w = p * (1.0 - p);
            h11 += f * f * w;
            h22 += w;
            h21 += f * w;
            const double d = target - p;
            g1 += f * d;
            g2 += d;
        }
        fit.iterations = it;
        if (std::max(std::abs(g1), std::abs(g2)) < kGradTol) {
            fit.converged = true;
            break;
        }
        const double det = h11 * h22 - h21 * h21;
        const double dA = -(h22 * g1 - h21 * g2) / det;
        const double dB = -(-h21 * g1 + h11 * g2) / det;
        const double slope = g1 * dA + g2 * dB;
        double step = 1.0;
        bool improved = false;
        while (step >= kMinStep) {
            const SigmoidCalibrator trial{c.A + step * dA, c.B + step * dB};
            const double trial_loss = platt_loss(trial, values, labels);
            if (trial_loss < loss + 1e-4 * step * slope) {
                c = trial;
                loss = trial_loss;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) {
            // no descent possible at double precision; accept if the gradient is tiny in relative terms
            fit.converged = std::max(std::abs(g1), std::abs(g2)) < 1e-6 * static_cast<double>(values.size());
            break;
        }
        fit.iterations = it + 1;
    }
    fit.calibrator = c;
    fit.loss = loss;
    return fit;
}

/// `SIGMOID v1 tool=<tag> A=<..> B=<..>`
inline void write_calibrator(std::ostream& out, std::string_view tool, const SigmoidCalibrator& c) {
    out << "SIGMOID v1 tool=" << tool << " A=" << format_double(c.A) << " B=" << format_double(c.B) << '\n';
}

inline std::pair<std::string, SigmoidCalibrator> parse_calibrator(std::string_view line) {
    line = trim(line);
    if (line.rfind("SIGMOID v1 ", 0) != 0) throw FormatError("not a SIGMOID v1 line");
    return {std::string(token_value(line, "tool")),
            SigmoidCalibrator{parse_double(token_value(line, "A")), parse_double(token_value(line, "B"))}};
}

}  // namespace splicefuse
