#include "oracles.hpp"

#include <splicefuse/svm.hpp>

#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <sstream>

using namespace splicefuse;

namespace {

struct Toy {
    RealMatrix x;
    std::vector<int> labels;
};

Toy random_toy(std::mt19937_64& rng, int n, int d) {
    Toy t{RealMatrix(n, d), std::vector<int>(n)};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        t.labels[i] = i < 2 ? i : static_cast<int>(rng() % 2);
        for (int k = 0; k < d; ++k) t.x(i, k) = u(rng) + 0.4 * t.labels[i] * (k == 0);
    }
    return t;
}

/// Worst KKT violation measured through the model's own decision values.
double kkt_violation(const SvmModel& m, const DualSolution& sol, const RealMatrix& x, const std::vector<int>& labels) {
    double worst = 0;
    std::vector<double> row(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index k = 0; k < x.cols(); ++k) row[k] = x(i, k);
        const double yf = (labels[i] ? 1.0 : -1.0) * decision_value(m, row);
        const double a = sol.alpha[i];
        if (a <= 0.0) worst = std::max(worst, 1.0 - yf);
        else if (a >= m.params.C) worst = std::max(worst, yf - 1.0);
        else worst = std::max(worst, std::abs(yf - 1.0));
    }
    return worst;
}

}  // namespace

TEST(RbfKernel, Values) {
    const std::vector<double> x{0, 0}, z{1, 0};
    EXPECT_DOUBLE_EQ(rbf_kernel(x, x, 3.0), 1.0);
    EXPECT_NEAR(rbf_kernel(x, z, 1.0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(rbf_kernel(x, z, 1.0), 0.36787944117144233, 1e-15);
    EXPECT_THROW(rbf_kernel(x, std::vector<double>{1}, 1.0), ShapeError);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> a{g(rng), g(rng), g(rng)}, b{g(rng), g(rng), g(rng)};
        const double k = rbf_kernel(a, b, 0.7);
        EXPECT_EQ(k, rbf_kernel(b, a, 0.7));
        EXPECT_GT(k, 0.0);
        EXPECT_LE(k, 1.0);
    }
}

TEST(TrainSvm, TwoPointAnalyticSolution) {
    RealMatrix x(2, 1);
    x << 0, 1;
    const std::vector<int> labels{1, 0};
    DualSolution sol;
    const SvmModel m = train_svm(x, labels, {1e6, 1.0}, 1e-9, 0, &sol);
    // with K12 = e^-1 the hard-margin dual gives alpha = 2 / (2 - 2 e^-1), bias 0
    const double alpha = 1.0 / (1.0 - std::exp(-1.0));
    EXPECT_NEAR(sol.alpha[0], alpha, 1e-6);
    EXPECT_NEAR(sol.alpha[1], alpha, 1e-6);
    EXPECT_GT(decision_value(m, std::vector<double>{0.0}), 0.0);
    EXPECT_LT(decision_value(m, std::vector<double>{1.0}), 0.0);
    EXPECT_NEAR(decision_value(m, std::vector<double>{0.5}), 0.0, 1e-6);
    EXPECT_NEAR(decision_value(m, std::vector<double>{0.0}), 1.0, 1e-6);
}

TEST(TrainSvm, XorIsLearned) {
    RealMatrix x(4, 2);
    x << 0, 0, 1, 1, 0, 1, 1, 0;
    const std::vector<int> labels{1, 1, 0, 0};
    const SvmModel m = train_svm(x, labels, {100.0, 2.0});
    const auto f = decision_values(m, x);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(f[i] > 0, labels[i] == 1) << i;
}

TEST(TrainSvm, DegenerateAndInvalidInput) {
    RealMatrix x = RealMatrix::Random(5, 2);
    EXPECT_THROW(train_svm(x, std::vector<int>(5, 1), {1, 1}), SvmError);
    EXPECT_THROW(train_svm(x, std::vector<int>{1, 0, 1, 0, 1}, {0.0, 1}), SvmError);
    EXPECT_THROW(train_svm(x, std::vector<int>{1, 0, 1}, {1, 1}), ShapeError);
}

TEST(TrainSvm, IterationCapReportsViolation) {
    std::mt19937_64 rng(5);
    const Toy t = random_toy(rng, 30, 2);
    const RealMatrix s = FeatureScaling::fit(t.x).apply(t.x);
    SmoOptions opt;
    opt.max_iterations = 1;
    try {
        solve_dual(rbf_gram(squared_distances(s), 10.0), signed_labels(t.labels), 100.0, opt);
        FAIL() << "expected a convergence error";
    } catch (const SvmConvergenceError& e) {
        EXPECT_GT(e.worst_violation, opt.tol);
    }
}

TEST(TrainSvm, InvariantsKktAndQpOracle) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 4 + static_cast<int>(rng() % 9);
        const Toy t = random_toy(rng, n, 2);
        const KernelParams p{std::ldexp(1.0, static_cast<int>(rng() % 8) - 2), std::ldexp(1.0, static_cast<int>(rng() % 6) - 2)};
        DualSolution sol;
        const SvmModel m = train_svm(t.x, t.labels, p, 1e-3, 0, &sol);
        double sum = 0;
        for (int i = 0; i < n; ++i) {
            EXPECT_GE(sol.alpha[i], 0.0);
            EXPECT_LE(sol.alpha[i], p.C);
            sum += sol.alpha[i] * (t.labels[i] ? 1 : -1);
        }
        EXPECT_NEAR(sum, 0.0, 1e-6);
        EXPECT_LE(kkt_violation(m, sol, t.x, t.labels), 1e-3);
        const RealMatrix s = FeatureScaling::fit(t.x).apply(t.x);
        const double qp = oracle::svm_dual_qp(rbf_gram(squared_distances(s), p.gamma), signed_labels(t.labels), p.C);
        EXPECT_NEAR(sol.objective, qp, 1e-4) << "trial " << trial;
    }
}

TEST(TrainSvm, DualObjectiveNonDecreasing) {
    std::mt19937_64 rng(3);
    const Toy t = random_toy(rng, 60, 3);
    const RealMatrix s = FeatureScaling::fit(t.x).apply(t.x);
    SmoOptions opt;
    opt.check_monotone = true;
    opt.tol = 1e-6;
    EXPECT_NO_THROW(solve_dual(rbf_gram(squared_distances(s), 4.0), signed_labels(t.labels), 10.0, opt));
}

TEST(TrainSvm, MarginVectorsSitOnTheMargin) {
    std::mt19937_64 rng(8);
    const Toy t = random_toy(rng, 40, 2);
    DualSolution sol;
    const SvmModel m = train_svm(t.x, t.labels, {4.0, 2.0}, 1e-3, 0, &sol);
    int free = 0;
    std::vector<double> row(2);
    for (int i = 0; i < 40; ++i) {
        if (sol.alpha[i] <= 0.0 || sol.alpha[i] >= 4.0) continue;
        ++free;
        row = {t.x(i, 0), t.x(i, 1)};
        EXPECT_NEAR(std::abs(decision_value(m, row)), 1.0, 1e-3);
    }
    EXPECT_GT(free, 0);
}

TEST(TrainSvm, PermutationInvariance) {
    std::mt19937_64 rng(21);
    const Toy t = random_toy(rng, 30, 2);
    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    RealMatrix xp(30, 2);
    std::vector<int> lp(30);
    for (int i = 0; i < 30; ++i) {
        xp.row(i) = t.x.row(perm[i]);
        lp[i] = t.labels[perm[i]];
    }
    const SvmModel a = train_svm(t.x, t.labels, {8.0, 1.0}, 1e-10);
    const SvmModel b = train_svm(xp, lp, {8.0, 1.0}, 1e-10);
    std::uniform_real_distribution<double> u(-0.2, 1.4);
    for (int probe = 0; probe < 20; ++probe) {
        const std::vector<double> x{u(rng), u(rng)};
        EXPECT_NEAR(decision_value(a, x), decision_value(b, x), 1e-6);
    }
}

TEST(DecisionValue, LipschitzUnderSmallPerturbation) {
    std::mt19937_64 rng(13);
    const Toy t = random_toy(rng, 25, 2);
    const SvmModel m = train_svm(t.x, t.labels, {16.0, 3.0});
    // |df/dx| <= sum |coef| * 2 gamma * max|s - x| * e^-gamma d^2 <= sum |coef| * sqrt(2 gamma / e)
    double bound = 0;
    for (double c : m.coef) bound += std::abs(c);
    bound *= std::sqrt(2.0 * m.params.gamma / std::exp(1.0));
    const double range0 = m.scaling.max[0] - m.scaling.min[0], range1 = m.scaling.max[1] - m.scaling.min[1];
    const double inv_range = 1.0 / std::min(range0, range1);
    std::uniform_real_distribution<double> u(0, 1);
    for (int probe = 0; probe < 50; ++probe) {
        const std::vector<double> x{u(rng), u(rng)};
        const double delta = 1e-6;
        const std::vector<double> x2{x[0] + delta, x[1] - delta};
        const double change = std::abs(decision_value(m, x2) - decision_value(m, x));
        EXPECT_LE(change, bound * inv_range * std::sqrt(2.0) * delta * 1.0001);
    }
    EXPECT_THROW(decision_value(m, std::vector<double>{1.0}), ShapeError);
}

TEST(SvmModel, TextRoundTripIsExact) {
    std::mt19937_64 rng(4);
    const Toy t = random_toy(rng, 20, 3);
    const SvmModel m = train_svm(t.x, t.labels, {2.0, 0.5});
    std::stringstream ss;
    m.write(ss);
    EXPECT_EQ(ss.str().rfind("SVMMODEL v1 C=2 gamma=0.5 dim=3 nsv=", 0), 0u);
    const SvmModel back = SvmModel::read(ss);
    std::vector<double> row(3);
    for (int i = 0; i < 20; ++i) {
        for (int k = 0; k < 3; ++k) row[k] = t.x(i, k);
        EXPECT_EQ(decision_value(m, row), decision_value(back, row));
    }
    std::stringstream bad("SVMMODEL v2 C=1\n");
    EXPECT_THROW(SvmModel::read(bad), FormatError);
}

TEST(GridSearch, SingleCell) {
    std::mt19937_64 rng(6);
    const Toy t = random_toy(rng, 30, 2);
    const auto r = grid_search(t.x, t.labels, {1.0}, {0.5}, 1);
    ASSERT_EQ(r.cells.size(), 1u);
    EXPECT_EQ(r.chosen, 0u);
    EXPECT_EQ(r.best().C, 1.0);
}

TEST(GridSearch, ArgmaxAndTieBreak) {
    std::mt19937_64 rng(7);
    Toy t = random_toy(rng, 60, 2);
    const auto r = grid_search(t.x, t.labels, {0.25, 1, 4, 16}, {0.125, 1, 8, 4096}, 3);
    for (const auto& c : r.cells) EXPECT_LE(c.accuracy, r.cells[r.chosen].accuracy);
    for (std::size_t k = 0; k < r.cells.size(); ++k) {
        if (r.cells[k].accuracy != r.cells[r.chosen].accuracy) continue;
        const bool earlier = r.cells[k].C < r.best().C || (r.cells[k].C == r.best().C && r.cells[k].gamma < r.best().gamma);
        EXPECT_FALSE(earlier) << "tie not broken toward smaller C, gamma";
    }
}

TEST(GridSearch, DefaultGridShape) {
    std::mt19937_64 rng(9);
    const Toy t = random_toy(rng, 100, 2);
    EXPECT_EQ(default_c_grid().size(), 11u);
    EXPECT_EQ(default_gamma_grid().size(), 10u);
    EXPECT_EQ(default_c_grid().front(), 1.0 / 32);
    EXPECT_EQ(default_gamma_grid().back(), 8.0);
    const auto r = grid_search(t.x, t.labels, default_c_grid(), default_gamma_grid(), 5);
    ASSERT_EQ(r.cells.size(), 110u);
    for (const auto& c : r.cells) {
        EXPECT_GE(c.accuracy, 0.0);
        EXPECT_LE(c.accuracy, 1.0);
    }
    // worker count does not change the outcome
    GridSearchOptions opt;
    opt.workers = 3;
    const auto r3 = grid_search(t.x, t.labels, default_c_grid(), default_gamma_grid(), 5, opt);
    EXPECT_EQ(r3.chosen, r.chosen);
    for (std::size_t k = 0; k < r.cells.size(); ++k) EXPECT_EQ(r3.cells[k].accuracy, r.cells[k].accuracy);
}

TEST(GridSearch, FailingCellIsFlagged) {
    // a single positive: the fold that holds it out trains on negatives only
    RealMatrix x(8, 1);
    x << 0, 1, 2, 3, 4, 5, 6, 7;
    const std::vector<int> labels{1, 0, 0, 0, 0, 0, 0, 0};
    GridSearchOptions opt;
    opt.folds = 2;
    const auto r = grid_search(x, labels, {1.0, 2.0}, {1.0}, 0, opt);
    for (const auto& c : r.cells) {
        EXPECT_TRUE(c.failed);
        EXPECT_EQ(c.accuracy, 0.0);
        EXPECT_NE(c.error.find("one class"), std::string::npos);
    }
    EXPECT_THROW(grid_search(x, labels, {}, {1.0}, 0), SvmError);
    opt.folds = 1;
    EXPECT_THROW(grid_search(x, labels, {1.0}, {1.0}, 0, opt), SvmError);
}

TEST(StratifiedFolds, Balanced) {
    std::vector<int> labels(53);
    for (int i = 0; i < 53; ++i) labels[i] = i % 3 == 0;
    const auto f = stratified_folds(labels, 5, 1);
    std::vector<int> count(5, 0), pos(5, 0);
    for (int i = 0; i < 53; ++i) {
        ++count[f[i]];
        pos[f[i]] += labels[i];
    }
    for (int k = 0; k < 5; ++k) {
        EXPECT_GE(count[k], 10);
        EXPECT_LE(count[k], 11);
        EXPECT_GE(pos[k], 3);
        EXPECT_LE(pos[k], 4);
    }
}
