#include "tdy/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace tdy {

namespace {

double cosine(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw DimensionError("pair_score: embedding shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        dot += a.data[i] * b.data[i];
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
    }
    if (!(na > 1e-60) || !(nb > 1e-60)) {
        throw DataError("pair_score: zero-norm embedding");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct ErrorRates {
    double far;
    double frr;
};

// Error rates of the accept-if-score>=threshold rule, computed from scores
// sorted ascending with parallel labels.
class RateSweep {
public:
    RateSweep(const std::vector<double>& scores, const std::vector<int>& labels) {
        if (scores.size() != labels.size()) {
            throw DimensionError("score/label count mismatch");
        }
        std::vector<std::size_t> order(scores.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
        sorted_scores_.reserve(order.size());
        targets_below_.reserve(order.size());
        std::int64_t targets_seen = 0, nontargets_seen = 0;
        for (std::size_t i : order) {
            sorted_scores_.push_back(scores[i]);
            targets_below_.push_back(targets_seen);
            nontargets_below_.push_back(nontargets_seen);
            if (labels[i] != 0) {
                ++targets_seen;
            } else {
                ++nontargets_seen;
            }
        }
        n_targets_ = targets_seen;
        n_nontargets_ = nontargets_seen;
        if (n_targets_ == 0 || n_nontargets_ == 0) {
            throw DataError("need at least one target and one nontarget trial, got " +
                            std::to_string(n_targets_) + "/" + std::to_string(n_nontargets_));
        }
    }

    // Candidate thresholds: each unique score plus +inf (reject all).
    std::vector<double> thresholds() const {
        std::vector<double> out;
        for (std::size_t i = 0; i < sorted_scores_.size(); ++i) {
            if (i == 0 || sorted_scores_[i] != sorted_scores_[i - 1]) {
                out.push_back(sorted_scores_[i]);
            }
        }
        out.push_back(std::numeric_limits<double>::infinity());
        return out;
    }

    ErrorRates rates_at(double threshold) const {
        // First index with score >= threshold.
        const auto it = std::lower_bound(sorted_scores_.begin(), sorted_scores_.end(), threshold);
        const std::size_t idx = static_cast<std::size_t>(it - sorted_scores_.begin());
        const std::int64_t tar_below =
            idx < targets_below_.size() ? targets_below_[idx] : n_targets_;
        const std::int64_t non_below =
            idx < nontargets_below_.size() ? nontargets_below_[idx] : n_nontargets_;
        return ErrorRates{
            static_cast<double>(n_nontargets_ - non_below) / static_cast<double>(n_nontargets_),
            static_cast<double>(tar_below) / static_cast<double>(n_targets_)};
    }

private:
    std::vector<double> sorted_scores_;
    std::vector<std::int64_t> targets_below_;
    std::vector<std::int64_t> nontargets_below_;
    std::int64_t n_targets_ = 0;
    std::int64_t n_nontargets_ = 0;
};

} // namespace

double pair_score(const std::vector<TensorPtr>& embs_a, const std::vector<TensorPtr>& embs_b) {
    if (embs_a.size() != 10 || embs_b.size() != 10) {
        throw DimensionError("pair_score: each side must hold exactly 10 embeddings, got " +
                             std::to_string(embs_a.size()) + "/" + std::to_string(embs_b.size()));
    }
    double acc = 0.0;
    for (const auto& a : embs_a) {
        for (const auto& b : embs_b) {
            acc += cosine(*a, *b);
        }
    }
    return acc / 100.0;
}

double compute_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
    RateSweep sweep(scores, labels);
    const auto thresholds = sweep.thresholds();
    // FAR decreases and FRR increases with the threshold. At the lowest
    // threshold FAR=1, FRR=0; find the sign change of (FAR - FRR) and
    // interpolate linearly between the adjacent operating points.
    ErrorRates prev = sweep.rates_at(thresholds.front());
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        const ErrorRates cur = sweep.rates_at(thresholds[i]);
        if (cur.frr >= cur.far) {
            const double d_prev = prev.far - prev.frr; // > 0
            const double d_cur = cur.far - cur.frr;    // <= 0
            if (d_cur == 0.0) {
                return cur.far;
            }
            const double s = d_prev / (d_prev - d_cur);
            return prev.far + s * (cur.far - prev.far);
        }
        prev = cur;
    }
    return 1.0; // unreachable: reject-all always has FRR=1 >= FAR=0
}

double compute_min_dcf(const std::vector<double>& scores, const std::vector<int>& labels,
                       const DCFParams& params) {
    if (!(params.c_miss > 0.0) || !(params.c_fa > 0.0)) {
        throw ParameterError("compute_min_dcf: costs must be positive");
    }
    if (!(params.p_target > 0.0 && params.p_target < 1.0)) {
        throw ParameterError("compute_min_dcf: p_target must lie in (0,1)");
    }
    RateSweep sweep(scores, labels);
    double best = std::numeric_limits<double>::infinity();
    for (double threshold : sweep.thresholds()) {
        const ErrorRates r = sweep.rates_at(threshold);
        const double cost = params.c_miss * r.frr * params.p_target +
                            params.c_fa * r.far * (1.0 - params.p_target);
        best = std::min(best, cost);
    }
    const double norm = std::min(params.c_miss * params.p_target,
                                 params.c_fa * (1.0 - params.p_target));
    return best / norm;
}

std::vector<TrialRecord> load_trial_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("load_trial_list: cannot open " + path);
    }
    std::vector<TrialRecord> trials;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream ls(line);
        std::string label, a, b, extra;
        if (!(ls >> label >> a >> b) || (ls >> extra)) {
            throw ParseError("load_trial_list: " + path + ":" + std::to_string(line_no) +
                             ": expected 'label path_a path_b'");
        }
        TrialRecord t;
        if (label == "1") {
            t.target = true;
        } else if (label == "0") {
            t.target = false;
        } else {
            throw ParseError("load_trial_list: " + path + ":" + std::to_string(line_no) +
                             ": label must be 0 or 1, got '" + label + "'");
        }
        t.path_a = a;
        t.path_b = b;
        trials.push_back(std::move(t));
    }
    return trials;
}

} // namespace tdy
