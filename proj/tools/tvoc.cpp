// tvoc: command-line driver for the tissue-vocabulary pipeline.
//
//   tvoc synth --config run.cfg
//   tvoc train --config run.cfg --set dcn.epochs=20 --threads 4
//
// Exit codes: 0 success, 1 user error (bad config, missing stage output, bad input
// file), 2 internal error.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tvoc/config.hpp"
#include "tvoc/error.hpp"
#include "tvoc/parallel.hpp"
#include "tvoc/pipeline.hpp"

namespace {

bool is_user_error(tvoc::Errc c) {
    using tvoc::Errc;
    switch (c) {
        case Errc::ConfigInvalid:
        case Errc::MissingArtifact:
        case Errc::InvalidArgument:
        case Errc::ParseError:
        case Errc::BadMagic:
        case Errc::BadHeader:
        case Errc::TruncatedFile:
        case Errc::NonFiniteData:
        case Errc::DimOverflow:
        case Errc::CorruptFile:
        case Errc::VersionMismatch:
        case Errc::IoFailure:
        case Errc::SpecInvalid:
        case Errc::MissingSequence:
        case Errc::DuplicateSequence:
        case Errc::MissingTransform:
        case Errc::MaskTooSmall:
        case Errc::BadPatchSize:
        case Errc::SequenceMismatch:
        case Errc::CodebookMismatch:
        case Errc::LayoutMismatch:
            return true;
        default:
            return false;
    }
}

const char* describe(const std::string& stage) {
    if (stage == "synth") return "Generate the synthetic cohort";
    if (stage == "sample") return "Draw training patches per sequence";
    if (stage == "pretrain") return "Pretrain the autoencoders on reconstruction";
    if (stage == "train") return "Joint autoencoder and k-means training";
    if (stage == "encode") return "Cluster maps and signatures for every visit";
    if (stage == "predict") return "Grade prediction from baseline signatures";
    if (stage == "respond") return "Treatment-arm regression on difference signatures";
    if (stage == "transitions") return "Registration, transition matrices and arm comparisons";
    if (stage == "phenotypes") return "Hierarchical phenotypes and grade associations";
    if (stage == "gradcheck") return "Finite-difference check of the network gradients";
    if (stage == "report") return "Summarize outputs after checking they share one config";
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tissue vocabulary learning and longitudinal analysis"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::vector<std::string> overrides;
    int threads = 0;
    bool print_config = false;
    app.add_option("-c,--config", config_path, "Config file (key = value lines)");
    app.add_option("-s,--set", overrides, "Override a config key: key=value (repeatable)");
    app.add_option("-t,--threads", threads, "Worker threads (default: TVOC_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("--print-config", print_config, "Print the effective config before running");

    std::vector<std::pair<std::string, CLI::App*>> subs;
    for (const std::string& stage : tvoc::stage_names()) subs.emplace_back(stage, app.add_subcommand(stage, describe(stage)));
    CLI::App* all = app.add_subcommand("all", "Run every stage in order");
    for (auto& [name, sub] : subs) sub->fallthrough();
    all->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        tvoc::RunConfig cfg = config_path.empty() ? tvoc::RunConfig{} : tvoc::load_config(config_path);
        for (const std::string& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) tvoc::fail(tvoc::Errc::ConfigInvalid, "--set expects key=value, got '" + kv + "'");
            tvoc::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        tvoc::validate(cfg);
        if (threads > 0) tvoc::set_thread_count(std::size_t(threads));
        if (print_config) std::cout << tvoc::to_text(cfg);

        if (all->parsed()) {
            tvoc::run_all(cfg, std::cout);
            return 0;
        }
        for (auto& [name, sub] : subs)
            if (sub->parsed()) tvoc::run_stage(name, cfg, std::cout);
        return 0;
    } catch (const tvoc::Error& e) {
        std::cerr << "tvoc: " << e.what() << "\n";
        return is_user_error(e.code()) ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "tvoc: internal error: " << e.what() << "\n";
        return 2;
    }
}
