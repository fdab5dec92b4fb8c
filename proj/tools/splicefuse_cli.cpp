#include <splicefuse/pipeline.hpp>
#include <splicefuse/synthetic.hpp>

#include "CLI11.hpp"

#include <iostream>

using namespace splicefuse;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
    std::string dataset;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "key = value config file");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--workers", f.workers, "worker threads");
    cmd->add_option("--out", f.out, "output directory (default: $SPLICEFUSE_OUT or ./splicefuse_out)");
}

PipelineConfig make_config(const CommonFlags& f) {
    PipelineConfig cfg = f.config.empty() ? PipelineConfig{} : PipelineConfig::load(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.workers) cfg.workers = *f.workers;
    if (!f.out.empty()) cfg.out = f.out;
    if (!f.dataset.empty()) cfg.dataset = f.dataset;
    cfg.validate();
    return cfg;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splicefuse: fused image-splicing detection"};
    app.require_subcommand(1);

    CommonFlags flags;
    auto* extract = app.add_subcommand("extract", "extract WAVELET, GLCM_EDGE and RUN_LENGTH feature tables");
    add_common(extract, flags);
    extract->add_option("--dataset", flags.dataset, "corpus root with authentic/ and spliced/");

    auto* train = app.add_subcommand("train", "train every (run, k) bundle");
    add_common(train, flags);

    auto* evaluate = app.add_subcommand("evaluate", "write sensitivity and specificity tables");
    add_common(evaluate, flags);

    std::string bundle, image;
    auto* predict = app.add_subcommand("predict", "classify one block (exit 0 authentic, 2 forged, 1 error)");
    predict->add_option("--bundle", bundle, "bundle directory")->required();
    predict->add_option("image", image, "grayscale block (PGM, PNG or BMP)")->required();

    std::string scratch = "splicefuse_selftest";
    auto* selftest = app.add_subcommand("selftest", "small end-to-end run on a generated corpus");
    selftest->add_option("--scratch", scratch, "working directory, replaced on each run");

    SyntheticSpec synth_spec;
    std::string synth_root;
    auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
    synth->add_option("root", synth_root, "corpus root to create")->required();
    synth->add_option("--authentic", synth_spec.authentic, "authentic blocks");
    synth->add_option("--spliced", synth_spec.spliced, "spliced blocks");
    synth->add_option("--size", synth_spec.size, "block side");
    synth->add_option("--seed", synth_spec.seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*extract) {
            const auto s = cmd_extract(make_config(flags), log_line);
            std::cout << "extracted " << s.blocks << " blocks (" << s.rejected << " rejected)\n";
            for (const auto& f : s.files) std::cout << f.generic_string() << '\n';
        } else if (*train) {
            const auto s = cmd_train(make_config(flags), log_line);
            std::cout << "trained " << s.cells.size() - s.failed() << " of " << s.cells.size() << " cells\n";
            for (const auto& c : s.cells)
                if (!c.ok) std::cout << "failed " << cell_name(c.run, c.k) << ": " << c.error << '\n';
        } else if (*evaluate) {
            const auto cfg = make_config(flags);
            const auto s = cmd_evaluate(cfg);
            std::cout << "sensitivity\n";
            s.sensitivity.write_csv(std::cout);
            std::cout << "specificity\n";
            s.specificity.write_csv(std::cout);
            for (const auto& m : s.missing) std::cerr << "missing " << m << '\n';
        } else if (*predict) {
            const auto r = cmd_predict(bundle, image);
            write_prediction(std::cout, r);
            return r.fused.verdict == Label::authentic ? 0 : 2;
        } else if (*selftest) {
            const auto failures = run_selftest(scratch, log_line);
            std::cout << (failures.empty() ? "selftest passed" : "selftest FAILED") << '\n';
            return failures.empty() ? 0 : 1;
        } else if (*synth) {
            write_synthetic_corpus(synth_root, synth_spec);
            std::cout << "wrote " << synth_spec.authentic + synth_spec.spliced << " blocks to " << synth_root << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
