#include <splicefuse/eval.hpp>

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace splicefuse;

namespace {

std::vector<Label> labels_of(std::initializer_list<int> v) {
    std::vector<Label> out;
    for (int x : v) out.push_back(label_from_int(x));
    return out;
}

RunReport report(std::size_t run, std::size_t k, ConfusionCounts fused) {
    RunReport r;
    r.run_index = run;
    r.k = k;
    r.counts.fill({5, 5, 5, 5});
    r.counts[kFusedColumn] = fused;
    return r;
}

}  // namespace

TEST(Confusion, AllForgedDetected) {
    const auto y = labels_of({0, 0, 0, 0});
    const auto c = confusion(y, y);
    EXPECT_EQ(c, (ConfusionCounts{4, 0, 0, 0}));
}

TEST(Confusion, ComplementHasNoCorrect) {
    const auto y = labels_of({0, 1, 1, 0, 1});
    const auto v = labels_of({1, 0, 0, 1, 0});
    const auto c = confusion(v, y);
    EXPECT_EQ(c.tp, 0u);
    EXPECT_EQ(c.tn, 0u);
    EXPECT_EQ(c.fp, 3u);
    EXPECT_EQ(c.fn, 2u);
}

TEST(Confusion, MatchesNaiveLoopAndIsPermutationInvariant) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Label> v(50), y(50);
        for (int i = 0; i < 50; ++i) {
            v[i] = label_from_int(static_cast<int>(rng() % 2));
            y[i] = label_from_int(static_cast<int>(rng() % 2));
        }
        std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (int i = 0; i < 50; ++i) {
            const int vi = to_int(v[i]), yi = to_int(y[i]);
            if (vi == 0 && yi == 0) ++tp;
            if (vi == 0 && yi == 1) ++fp;
            if (vi == 1 && yi == 1) ++tn;
            if (vi == 1 && yi == 0) ++fn;
        }
        const auto c = confusion(v, y);
        EXPECT_EQ(c, (ConfusionCounts{tp, fp, tn, fn}));
        EXPECT_EQ(c.total(), 50u);
        const auto forged = static_cast<std::size_t>(std::count(y.begin(), y.end(), Label::forged));
        EXPECT_EQ(c.forged(), forged);
        EXPECT_EQ(c.authentic(), 50u - forged);

        std::vector<std::size_t> perm(50);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Label> pv, py;
        for (auto i : perm) {
            pv.push_back(v[i]);
            py.push_back(y[i]);
        }
        EXPECT_EQ(confusion(pv, py), c);
    }
}

TEST(Confusion, LengthMismatchThrows) {
    const auto a = labels_of({0, 1});
    const auto b = labels_of({0});
    EXPECT_THROW(confusion(a, b), ShapeError);
}

TEST(Rates, Sensitivity) {
    EXPECT_NEAR(sensitivity({71, 0, 0, 11}), 0.8659, 5e-5);
    EXPECT_EQ(sensitivity({0, 3, 3, 4}), 0.0);
    EXPECT_EQ(sensitivity({5, 3, 3, 0}), 1.0);
    EXPECT_THROW(sensitivity({0, 3, 3, 0}), UndefinedRateError);
}

TEST(Rates, Specificity) {
    EXPECT_NEAR(specificity({0, 13, 137, 0}), 0.9133, 5e-5);
    EXPECT_EQ(specificity({1, 4, 0, 1}), 0.0);
    EXPECT_EQ(specificity({1, 0, 4, 1}), 1.0);
    EXPECT_THROW(specificity({3, 0, 0, 1}), UndefinedRateError);
}

TEST(Aggregate, SingleRunEqualsRun) {
    const std::vector<RunReport> r{report(0, 30, {8, 1, 9, 2})};
    for (auto mode : {Aggregation::best, Aggregation::mean}) {
        const auto t = aggregate_runs(r, Metric::sensitivity, mode);
        EXPECT_EQ(t.at(30, kFusedColumn), 0.8);
        EXPECT_EQ(t.at(30, 0), 0.5);
    }
}

TEST(Aggregate, BestAndMean) {
    const std::vector<RunReport> r{report(0, 50, {80, 0, 1, 20}), report(1, 50, {86, 0, 1, 14})};
    EXPECT_EQ(aggregate_runs(r, Metric::sensitivity, Aggregation::best).at(50, kFusedColumn), 0.86);
    const std::vector<RunReport> m{report(0, 50, {8, 0, 1, 2}), report(1, 50, {9, 0, 1, 1})};
    EXPECT_DOUBLE_EQ(*aggregate_runs(m, Metric::sensitivity, Aggregation::mean).at(50, kFusedColumn), 0.85);
}

TEST(Aggregate, CsvLayoutWithMissingRows) {
    const std::vector<RunReport> r{report(0, 30, {1, 0, 1, 1}), report(0, kAllFeatures, {1, 0, 1, 0})};
    const auto t = aggregate_runs(r, Metric::sensitivity, Aggregation::best, {30, 50, 75, 100, kAllFeatures});
    std::ostringstream out;
    t.write_csv(out);
    EXPECT_EQ(out.str(),
              "features,DWT,EdgeGLCM,RunLength,NFIS\n"
              "30,0.5,0.5,0.5,0.5\n"
              "50,NA,NA,NA,NA\n"
              "75,NA,NA,NA,NA\n"
              "100,NA,NA,NA,NA\n"
              "All,0.5,0.5,0.5,1\n");
}

TEST(Aggregate, UndefinedRatesAreSkipped) {
    RunReport a = report(0, 30, {0, 1, 1, 0});
    RunReport b = report(1, 30, {3, 1, 1, 1});
    const std::vector<RunReport> r{a, b};
    EXPECT_EQ(aggregate_runs(r, Metric::sensitivity, Aggregation::mean).at(30, kFusedColumn), 0.75);
    const std::vector<RunReport> only{a};
    EXPECT_FALSE(aggregate_runs(only, Metric::sensitivity, Aggregation::mean).at(30, kFusedColumn).has_value());
}

TEST(RunReportIo, RoundTrip) {
    RunReport r;
    r.run_index = 3;
    r.k = kAllFeatures;
    r.counts = {ConfusionCounts{1, 2, 3, 4}, ConfusionCounts{5, 6, 7, 8}, ConfusionCounts{9, 10, 11, 12},
                ConfusionCounts{13, 14, 15, 16}};
    std::stringstream ss;
    r.write(ss);
    const auto back = RunReport::read(ss);
    EXPECT_EQ(back.run_index, 3u);
    EXPECT_EQ(back.k, kAllFeatures);
    EXPECT_EQ(back.counts, r.counts);
}

TEST(AggregationName, Parse) {
    EXPECT_EQ(parse_aggregation("best"), Aggregation::best);
    EXPECT_EQ(parse_aggregation(" mean "), Aggregation::mean);
    EXPECT_THROW(parse_aggregation("median"), FormatError);
}
