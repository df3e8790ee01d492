#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdy/tensor.hpp"

namespace tdy {

struct TrialRecord {
    bool target = false;
    std::string path_a;
    std::string path_b;
};

struct DCFParams {
    double c_miss = 1.0;
    double c_fa = 1.0;
    double p_target = 0.05;
};

struct EvalReport {
    double eer = 0.0;
    double min_dcf_normalized = 0.0;
    std::vector<double> scores; // per trial, order preserved
    std::vector<int> labels;    // 1 target, 0 nontarget
};

/// Mean of the 10x10 cosine similarities between the two segment-embedding
/// sets. Both sides must hold exactly ten embeddings.
double pair_score(const std::vector<TensorPtr>& embs_a, const std::vector<TensorPtr>& embs_b);

/// Equal error rate with linear interpolation at the FAR=FRR crossing.
/// Accept rule: score >= threshold.
double compute_eer(const std::vector<double>& scores, const std::vector<int>& labels);

/// Minimum normalized detection cost:
/// min over thresholds of c_miss*P_miss*p_target + c_fa*P_fa*(1-p_target),
/// divided by min(c_miss*p_target, c_fa*(1-p_target)).
double compute_min_dcf(const std::vector<double>& scores, const std::vector<int>& labels,
                       const DCFParams& params);

/// Parses lines `label path_a path_b` with label 1 (target) or 0
/// (nontarget). Order preserved; malformed lines raise ParseError with the
/// line number.
std::vector<TrialRecord> load_trial_list(const std::string& path);

} // namespace tdy
