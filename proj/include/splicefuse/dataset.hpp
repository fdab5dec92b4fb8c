#pragma once

#include "splicefuse/core.hpp"
#include "splicefuse/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace splicefuse {

inline constexpr int kBlockSize = 128;

/// One labelled 8-bit grayscale block of the corpus.
class ImageBlock {
public:
    /// Validates the block invariants. `expected_size` is 128 for real corpus blocks;
    /// small sizes are accepted for desk-scale experiments.
    ImageBlock(std::string id, IntMatrix pixels, Label label, int expected_size = kBlockSize)
        : id_(std::move(id)), pixels_(std::move(pixels)), label_(label) {
        if (pixels_.rows() != expected_size || pixels_.cols() != expected_size)
            throw ShapeError("block '" + id_ + "' is " + std::to_string(pixels_.rows()) + "x" +
                             std::to_string(pixels_.cols()) + ", expected " + std::to_string(expected_size) + "x" +
                             std::to_string(expected_size));
        if (pixels_.size() > 0 && (pixels_.minCoeff() < 0 || pixels_.maxCoeff() > 255))
            throw ShapeError("block '" + id_ + "' has pixel values outside [0,255]");
    }

    const std::string& id() const noexcept { return id_; }
    const IntMatrix& pixels() const noexcept { return pixels_; }
    Label label() const noexcept { return label_; }

private:
    std::string id_;
    IntMatrix pixels_;
    Label label_;
};

/// Identity and label of a sample; what splitting needs from a corpus.
struct SampleRef {
    std::string id;
    Label label;
};

struct Rejection {
    std::filesystem::path path;
    std::string reason;
};

/// Files skipped by load_corpus. Printed as `REJECTED <path> <reason>` lines.
struct LoadReport {
    std::vector<Rejection> rejected;

    void write(std::ostream& out) const {
        for (const auto& r : rejected) out << "REJECTED " << r.path.generic_string() << ' ' << r.reason << '\n';
    }
};

struct Corpus {
    std::vector<ImageBlock> blocks;
    LoadReport report;
};

/// Loads `<root>/authentic` (label 1) and `<root>/spliced` (label 0), recursively.
/// Ids are root-relative generic paths; blocks come back sorted by id.
inline Corpus load_corpus(const std::filesystem::path& root, int block_size = kBlockSize) {
    namespace fs = std::filesystem;
    const std::pair<const char*, Label> classes[] = {{"authentic", Label::authentic}, {"spliced", Label::forged}};
    for (const auto& [dir, label] : classes) {
        if (!fs::is_directory(root / dir))
            throw CorpusLayoutError("corpus root '" + root.string() + "' has no '" + dir + "/' subdirectory");
    }
    Corpus corpus;
    for (const auto& [dir, label] : classes) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(root / dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            const std::string id = fs::relative(file, root).generic_string();
            try {
                IntMatrix pixels = read_gray_image(file);
                if (pixels.rows() != block_size || pixels.cols() != block_size) {
                    corpus.report.rejected.push_back(
                        {file, "wrong dimensions " + std::to_string(pixels.cols()) + "x" + std::to_string(pixels.rows())});
                    continue;
                }
                corpus.blocks.emplace_back(id, std::move(pixels), label, block_size);
            } catch (const ImageError& e) {
                corpus.report.rejected.push_back({file, e.what()});
            }
        }
    }
    std::sort(corpus.blocks.begin(), corpus.blocks.end(),
              [](const ImageBlock& a, const ImageBlock& b) { return a.id() < b.id(); });
    return corpus;
}

inline std::vector<SampleRef> sample_refs(const std::vector<ImageBlock>& blocks) {
    std::vector<SampleRef> refs;
    refs.reserve(blocks.size());
    for (const auto& b : blocks) refs.push_back({b.id(), b.label()});
    return refs;
}

/// One run's train/test partition. Ids are kept in corpus order.
struct SplitPlan {
    int run_index = 1;
    std::uint64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;

    friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

inline std::size_t train_size(std::size_t n, double train_fraction) {
    return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 0.5 + 1e-9));
}

inline constexpr int kSplitRetries = 100;

/// Uniform random train/test splits, one per run. A draw is retried (up to
/// kSplitRetries sub-seeds) until the training set holds both classes and,
/// when the test set has room for it, so does the test set.
inline std::vector<SplitPlan> make_splits(const std::vector<SampleRef>& corpus, std::uint64_t seed, int runs,
                                          double train_fraction = 0.9) {
    if (runs < 1) throw SplitError("runs must be >= 1");
    if (corpus.size() < 10) throw SplitError("split-too-small: corpus has " + std::to_string(corpus.size()) + " blocks, need >= 10");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw SplitError("train fraction must lie in (0,1)");
    const std::size_t n = corpus.size();
    const std::size_t n_train = train_size(n, train_fraction);
    if (n_train == 0 || n_train >= n) throw SplitError("split-too-small: fraction leaves an empty side");
    const std::size_t n_test = n - n_train;

    std::size_t n_auth = 0;
    for (const auto& s : corpus) n_auth += s.label == Label::authentic;
    const bool both_classes = n_auth > 0 && n_auth < n;

    std::vector<SplitPlan> plans;
    for (int run = 1; run <= runs; ++run) {
        bool done = false;
        for (int attempt = 0; attempt < kSplitRetries && !done; ++attempt) {
            const std::uint64_t sub_seed = derive_seed(seed, (static_cast<std::uint64_t>(run) << 32) | attempt);
            std::mt19937_64 rng(sub_seed);
            std::vector<std::size_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            shuffle(std::span(order), rng);
            std::vector<char> is_train(n, 0);
            for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = 1;

            std::size_t train_auth = 0, test_auth = 0;
            for (std::size_t i = 0; i < n; ++i) (is_train[i] ? train_auth : test_auth) += corpus[i].label == Label::authentic;
            if (both_classes) {
                if (train_auth == 0 || train_auth == n_train) continue;
                if (n_test >= 2 && (test_auth == 0 || test_auth == n_test)) continue;
            }
            SplitPlan plan{run, sub_seed, {}, {}};
            for (std::size_t i = 0; i < n; ++i) (is_train[i] ? plan.train_ids : plan.test_ids).push_back(corpus[i].id);
            plans.push_back(std::move(plan));
            done = true;
        }
        if (!done) throw SplitError("could not draw a split with both classes present for run " + std::to_string(run));
    }
    return plans;
}

inline std::vector<SplitPlan> make_splits(const std::vector<ImageBlock>& corpus, std::uint64_t seed, int runs,
                                          double train_fraction = 0.9) {
    return make_splits(sample_refs(corpus), seed, runs, train_fraction);
}

}  // namespace splicefuse
