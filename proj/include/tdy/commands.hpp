#pragma once

#include <iosfwd>
#include <string>

#include "tdy/config.hpp"
#include "tdy/eval.hpp"
#include "tdy/phoneme.hpp"
#include "tdy/synth.hpp"

namespace tdy {

/// Command entry points shared by the CLI binary and the test suites. Each
/// command removes any partially written outputs when it fails.

void cmd_synth(const SynthSpec& spec, const std::string& out_dir);

struct TrainOutcome {
    std::string checkpoint_path;
    std::string log_path;
    std::vector<EpochStats> epoch_stats;
};

TrainOutcome cmd_train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const std::string& data_root, const std::string& out_dir);

/// Scores every trial with the 10x10 segment-cosine protocol, writes
/// `<out>/scores.txt` (`trial_index score label`, tab separated) and
/// `<out>/report.txt`, and prints `EER=... minDCF=...` to `out_stream`.
EvalReport cmd_eval(const std::string& checkpoint_path, const std::string& trial_path,
                    const std::string& data_root, const std::string& out_dir,
                    std::ostream& out_stream);

AnalysisResult cmd_analyze(const std::string& checkpoint_path, const std::string& corpus_root,
                           const std::string& out_dir, const AnalysisOptions& opts);

/// Prints parameter counts for the given config in static and dynamic form
/// plus their ratio; returns the ratio.
double cmd_params(const ModelConfig& cfg, std::ostream& out_stream);

} // namespace tdy
