// In-memory walk through the fusion pipeline on generated 64x64 blocks:
// features -> boosting selection -> RBF SVM -> sigmoid -> ANFIS -> verdicts.

#include <splicefuse/anfis.hpp>
#include <splicefuse/boostsel.hpp>
#include <splicefuse/calibrate.hpp>
#include <splicefuse/eval.hpp>
#include <splicefuse/features.hpp>
#include <splicefuse/svm.hpp>
#include <splicefuse/synthetic.hpp>

#include <iostream>

using namespace splicefuse;

int main() {
    constexpr int kSize = 64, kPerClass = 40;
    std::vector<ImageBlock> blocks;
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 2 * kPerClass; ++i) {
        const bool spliced = i % 2 == 1;
        blocks.emplace_back("b" + std::to_string(i), synthetic_block(spliced, kSize, rng),
                            spliced ? Label::forged : Label::authentic, kSize);
    }
    // even/odd interleaving above, so the first 60 hold both classes
    const std::size_t n_train = 60;

    std::vector<int> y_train, y_test;
    for (std::size_t i = 0; i < blocks.size(); ++i) (i < n_train ? y_train : y_test).push_back(to_int(blocks[i].label()));

    RealMatrix fused_train(static_cast<Eigen::Index>(n_train), 3), fused_test(static_cast<Eigen::Index>(blocks.size() - n_train), 3);
    for (Tool tool : kTools) {
        const auto t = static_cast<Eigen::Index>(tool);
        RealMatrix x(static_cast<Eigen::Index>(blocks.size()), static_cast<Eigen::Index>(feature_arity(tool)));
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto v = extract_features(tool, blocks[i]).values;
            for (std::size_t d = 0; d < v.size(); ++d) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v[d];
        }
        const RealMatrix x_train = x.topRows(static_cast<Eigen::Index>(n_train));
        const RealMatrix x_test = x.bottomRows(x.rows() - static_cast<Eigen::Index>(n_train));

        const auto sel = select_features(x_train, y_train, 10, tool);
        const RealMatrix s_train = select_columns(x_train, sel.indices);
        const RealMatrix s_test = select_columns(x_test, sel.indices);
        const auto grid = grid_search(s_train, y_train, pow2_grid(-1, 7, 2), pow2_grid(-9, 1, 2), 1);
        const auto svm = train_svm(s_train, y_train, grid.best());
        const auto cal = fit_sigmoid(decision_values(svm, s_train), y_train).calibrator;
        const auto dv_train = decision_values(svm, s_train);
        const auto dv_test = decision_values(svm, s_test);
        for (std::size_t i = 0; i < dv_train.size(); ++i) fused_train(static_cast<Eigen::Index>(i), t) = cal(dv_train[i]);
        for (std::size_t i = 0; i < dv_test.size(); ++i) fused_test(static_cast<Eigen::Index>(i), t) = cal(dv_test[i]);
        std::size_t right = 0;
        for (std::size_t i = 0; i < dv_test.size(); ++i) right += (cal(dv_test[i]) > 0.5) == (y_test[i] == 1);
        std::cout << tool_tag(tool) << ": " << sel.indices.size() << " features, C=" << grid.best().C
                  << " gamma=" << grid.best().gamma << ", test accuracy " << right << '/' << dv_test.size() << '\n';
    }

    const std::vector<double> targets(y_train.begin(), y_train.end());
    const auto fis = train_hybrid(init_fis(fused_train, targets, 0.5), fused_train, targets, {.epochs = 20, .schedule = {}});
    std::cout << "ANFIS rules=" << fis.rules.size() << " training RMSE=" << fis.final_rmse << '\n';

    std::vector<Label> verdicts, truth;
    for (Eigen::Index i = 0; i < fused_test.rows(); ++i) {
        const std::vector<double> p{fused_test(i, 0), fused_test(i, 1), fused_test(i, 2)};
        verdicts.push_back(fused_verdict(fis, p).verdict);
        truth.push_back(label_from_int(y_test[static_cast<std::size_t>(i)]));
    }
    const auto c = confusion(verdicts, truth);
    std::cout << "fused test sensitivity=" << sensitivity(c) << " specificity=" << specificity(c) << '\n';
}
