#include "tdy/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

namespace fs = std::filesystem;

namespace tdy {

namespace {

/// Removes registered paths unless dismissed; keeps failed commands from
/// leaving partial outputs behind.
class OutputGuard {
public:
    ~OutputGuard() {
        if (dismissed_) {
            return;
        }
        for (const auto& path : paths_) {
            std::error_code ec;
            fs::remove_all(path, ec);
        }
    }
    void track(const std::string& path) { paths_.push_back(path); }
    void dismiss() { dismissed_ = true; }

private:
    std::vector<std::string> paths_;
    bool dismissed_ = false;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

} // namespace

void cmd_synth(const SynthSpec& spec, const std::string& out_dir) {
    synth_corpus(spec, out_dir); // removes its own partial files on failure
}

TrainOutcome cmd_train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const std::string& data_root, const std::string& out_dir) {
    fs::create_directories(out_dir);
    TrainOutcome outcome;
    outcome.checkpoint_path = (fs::path(out_dir) / "model.tdy").string();
    outcome.log_path = (fs::path(out_dir) / "train.log").string();

    OutputGuard guard;
    guard.track(outcome.checkpoint_path);
    guard.track(outcome.log_path);

    auto files = scan_dataset(data_root);
    Model model(model_cfg, train_cfg.seed);
    Trainer trainer(model, train_cfg, files);
    {
        std::ofstream log(outcome.log_path);
        if (!log) {
            throw IoError("train: cannot write " + outcome.log_path);
        }
        trainer.run(&log);
    }
    save_checkpoint(outcome.checkpoint_path, model);
    outcome.epoch_stats = trainer.epoch_stats();
    guard.dismiss();
    return outcome;
}

EvalReport cmd_eval(const std::string& checkpoint_path, const std::string& trial_path,
                    const std::string& data_root, const std::string& out_dir,
                    std::ostream& out_stream) {
    fs::create_directories(out_dir);
    const std::string scores_path = (fs::path(out_dir) / "scores.txt").string();
    const std::string report_path = (fs::path(out_dir) / "report.txt").string();
    OutputGuard guard;
    guard.track(scores_path);
    guard.track(report_path);

    Model model = load_checkpoint(checkpoint_path);
    auto trials = load_trial_list(trial_path);
    if (trials.empty()) {
        throw DataError("eval: trial list " + trial_path + " is empty");
    }

    // Ten 4-second segments per utterance, embedded in one batched forward.
    std::map<std::string, std::vector<TensorPtr>> cache;
    auto embeddings_for = [&](const std::string& rel) -> const std::vector<TensorPtr>& {
        auto it = cache.find(rel);
        if (it != cache.end()) {
            return it->second;
        }
        const std::string path =
            data_root.empty() ? rel : (fs::path(data_root) / rel).string();
        auto wav = load_wav(path);
        auto segments = sample_segments(wav, SegmentMode::Eval, 0);
        const std::int64_t frames = log_mel_frame_count(kEvalSegmentSamples);
        auto x = Tensor::zeros({kEvalSegments, 1, kMelBins, frames});
        for (int i = 0; i < kEvalSegments; ++i) {
            auto mel = normalize_per_freq(log_mel(segments[static_cast<std::size_t>(i)]));
            std::copy(mel.values->data.begin(), mel.values->data.end(),
                      x->data.begin() + static_cast<std::int64_t>(i) * kMelBins * frames);
        }
        auto emb = model.forward_embeddings(x, BatchNormMode::Eval); // [10,D]
        assert_finite(*emb, "eval embeddings");
        std::vector<TensorPtr> list;
        const std::int64_t d = emb->shape[1];
        for (int i = 0; i < kEvalSegments; ++i) {
            auto e = Tensor::zeros({d});
            std::copy(emb->data.begin() + i * d, emb->data.begin() + (i + 1) * d,
                      e->data.begin());
            list.push_back(std::move(e));
        }
        return cache.emplace(rel, std::move(list)).first->second;
    };

    EvalReport report;
    for (const auto& trial : trials) {
        const double score = pair_score(embeddings_for(trial.path_a),
                                        embeddings_for(trial.path_b));
        report.scores.push_back(score);
        report.labels.push_back(trial.target ? 1 : 0);
    }
    report.eer = compute_eer(report.scores, report.labels);
    report.min_dcf_normalized = compute_min_dcf(report.scores, report.labels, DCFParams{});

    {
        std::ofstream scores(scores_path, std::ios::binary);
        if (!scores) {
            throw IoError("eval: cannot write " + scores_path);
        }
        for (std::size_t i = 0; i < report.scores.size(); ++i) {
            scores << i << '\t' << fmt(report.scores[i]) << '\t' << report.labels[i] << '\n';
        }
    }
    const std::string line =
        "EER=" + fmt(report.eer) + " minDCF=" + fmt(report.min_dcf_normalized);
    {
        std::ofstream rep(report_path, std::ios::binary);
        if (!rep) {
            throw IoError("eval: cannot write " + report_path);
        }
        rep << line << '\n';
    }
    out_stream << line << '\n';
    guard.dismiss();
    return report;
}

AnalysisResult cmd_analyze(const std::string& checkpoint_path, const std::string& corpus_root,
                           const std::string& out_dir, const AnalysisOptions& opts) {
    Model model = load_checkpoint(checkpoint_path);
    // export_analysis validates before writing and removes its own partials.
    return export_analysis(model, corpus_root, out_dir, opts);
}

double cmd_params(const ModelConfig& cfg, std::ostream& out_stream) {
    ModelConfig stat = cfg;
    stat.conv_mode = ConvMode::Static;
    ModelConfig dyn = cfg;
    if (dyn.conv_mode == ConvMode::Static) {
        dyn.conv_mode = ConvMode::Tdy;
    }
    const auto n_static = count_parameters(stat);
    const auto n_dyn = count_parameters(dyn);
    const double ratio = static_cast<double>(n_dyn) / static_cast<double>(n_static);
    out_stream << "family=" << cfg.family << " scale=" << cfg.channel_scale << " k=" << dyn.k
               << "\n";
    out_stream << "static\t" << n_static << "\n";
    out_stream << to_string(dyn.conv_mode) << "\t" << n_dyn << "\n";
    out_stream << "ratio\t" << fmt(ratio) << "\n";
    return ratio;
}

} // namespace tdy
