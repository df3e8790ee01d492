#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "tdy/commands.hpp"

namespace {

// Exit codes: 0 success, 1 contract/data error, 2 I/O error.
int run(int argc, char** argv) {
    CLI::App app{"Temporal dynamic convolution speaker-verification toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_root, checkpoint, trials, corpus;
    std::string conv_mode;
    std::int64_t seed = -1;
    int k = -1;
    std::string layers_arg;
    bool per_speaker = true;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key = value sections)");
        cmd->add_option("--seed", seed, "override the command's seed");
        cmd->add_option("--conv-mode", conv_mode, "static|dy|tdy")
            ->check(CLI::IsMember({"static", "dy", "tdy"}));
        cmd->add_option("--k", k, "number of basis kernels");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic speaker corpus");
    add_common(synth);
    synth->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a speaker embedding model");
    add_common(train);
    train->add_option("--data", data_root, "dataset root <root>/<speaker>/**.wav")->required();
    train->add_option("--out", out_dir, "output directory for checkpoint and log")->required();

    auto* eval = app.add_subcommand("eval", "score a trial list with a trained model");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval->add_option("--trials", trials, "trial list: label path_a path_b")->required();
    eval->add_option("--data", data_root, "root for relative trial paths");
    eval->add_option("--out", out_dir, "output directory for scores and report")->required();

    auto* analyze = app.add_subcommand("analyze", "phoneme-conditioned attention analysis");
    add_common(analyze);
    analyze->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    analyze->add_option("--corpus", corpus, "corpus with .phn sidecar labels")->required();
    analyze->add_option("--out", out_dir, "output directory for CSVs")->required();
    analyze->add_option("--layers", layers_arg, "comma-separated dynamic-layer indices");
    analyze->add_option("--per-speaker", per_speaker,
                        "split analysis by speaker (default) or pool");

    auto* params = app.add_subcommand("params", "print static/dynamic parameter counts");
    add_common(params);

    CLI11_PARSE(app, argc, argv);

    tdy::AppConfig cfg;
    if (!config_path.empty()) {
        cfg = tdy::load_app_config(config_path);
    }
    if (!conv_mode.empty()) {
        cfg.model.conv_mode = tdy::conv_mode_from_string(conv_mode);
    }
    if (k > 0) {
        cfg.model.k = k;
    }
    if (seed >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(seed);
        cfg.synth.seed = static_cast<std::uint64_t>(seed);
    }

    if (synth->parsed()) {
        tdy::cmd_synth(cfg.synth, out_dir);
        std::cout << "wrote corpus to " << out_dir << "\n";
    } else if (train->parsed()) {
        auto outcome = tdy::cmd_train(cfg.model, cfg.train, data_root, out_dir);
        std::cout << "checkpoint " << outcome.checkpoint_path << "\n";
    } else if (eval->parsed()) {
        tdy::cmd_eval(checkpoint, trials, data_root, out_dir, std::cout);
    } else if (analyze->parsed()) {
        tdy::AnalysisOptions opts;
        opts.per_speaker = per_speaker;
        if (!layers_arg.empty()) {
            std::size_t pos = 0;
            while (pos < layers_arg.size()) {
                const auto comma = layers_arg.find(',', pos);
                const auto tok = layers_arg.substr(
                    pos, comma == std::string::npos ? std::string::npos : comma - pos);
                opts.layers.push_back(std::stoi(tok));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }
        auto result = tdy::cmd_analyze(checkpoint, corpus, out_dir, opts);
        for (const auto& row : result.speaker_variance) {
            std::cout << "speaker " << row.speaker << " attention variance "
                      << row.total_variance << " over " << row.records << " bins\n";
        }
        for (const auto& row : result.summary) {
            std::cout << "layer " << row.layer_id << " speaker " << row.speaker
                      << " dispersion " << row.dispersion << "\n";
        }
    } else if (params->parsed()) {
        tdy::cmd_params(cfg.model, std::cout);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const tdy::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
