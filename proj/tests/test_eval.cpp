#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "tdy/eval.hpp"
#include "test_util.hpp"

using namespace tdy;
using testutil::random_tensor;

namespace {

// Exhaustive O(n^2) reference: recount both error rates from scratch at every
// candidate threshold.
struct OraclePoint {
    double far, frr;
};

std::vector<OraclePoint> oracle_sweep(const std::vector<double>& scores,
                                      const std::vector<int>& labels,
                                      std::vector<double>& thresholds) {
    thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(std::numeric_limits<double>::infinity());
    std::vector<OraclePoint> points;
    for (double th : thresholds) {
        std::int64_t fa = 0, non = 0, miss = 0, tar = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (labels[i] != 0) {
                ++tar;
                if (scores[i] < th) ++miss;
            } else {
                ++non;
                if (scores[i] >= th) ++fa;
            }
        }
        points.push_back({static_cast<double>(fa) / static_cast<double>(non),
                          static_cast<double>(miss) / static_cast<double>(tar)});
    }
    return points;
}

double oracle_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> thresholds;
    auto pts = oracle_sweep(scores, labels, thresholds);
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].frr >= pts[i].far) {
            const double d1 = pts[i - 1].far - pts[i - 1].frr;
            const double d2 = pts[i].far - pts[i].frr;
            if (d2 == 0.0) return pts[i].far;
            const double s = d1 / (d1 - d2);
            return pts[i - 1].far + s * (pts[i].far - pts[i - 1].far);
        }
    }
    return 1.0;
}

double oracle_min_dcf(const std::vector<double>& scores, const std::vector<int>& labels,
                      const DCFParams& p) {
    std::vector<double> thresholds;
    auto pts = oracle_sweep(scores, labels, thresholds);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& pt : pts) {
        best = std::min(best, p.c_miss * pt.frr * p.p_target + p.c_fa * pt.far * (1.0 - p.p_target));
    }
    return best / std::min(p.c_miss * p.p_target, p.c_fa * (1.0 - p.p_target));
}

} // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("pair_score analytic cases") {
    auto e1 = Tensor::from({4}, {1.0, 0.0, 0.0, 0.0});
    auto e2 = Tensor::from({4}, {0.0, 2.0, 0.0, 0.0});

    SUBCASE("identical embeddings score 1") {
        std::vector<TensorPtr> a(10, e1), b(10, e1);
        CHECK(pair_score(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("orthogonal embeddings score 0") {
        std::vector<TensorPtr> a(10, e1), b(10, e2);
        CHECK(pair_score(a, b) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    }
    SUBCASE("half matched, half orthogonal scores one half") {
        std::vector<TensorPtr> a(10, e1), b;
        for (int i = 0; i < 5; ++i) b.push_back(e1);
        for (int i = 0; i < 5; ++i) b.push_back(e2);
        CHECK(pair_score(a, b) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("symmetry and contract errors") {
        Rng rng(3);
        std::vector<TensorPtr> a, b;
        for (int i = 0; i < 10; ++i) {
            a.push_back(random_tensor({6}, rng, -1.0, 1.0));
            b.push_back(random_tensor({6}, rng, -1.0, 1.0));
        }
        CHECK(std::fabs(pair_score(a, b) - pair_score(b, a)) < 1e-12);
        std::vector<TensorPtr> nine(a.begin(), a.begin() + 9);
        CHECK_THROWS_AS((void)pair_score(nine, b), DimensionError);
        std::vector<TensorPtr> zeros(10, Tensor::zeros({6}));
        CHECK_THROWS_AS((void)pair_score(zeros, b), DataError);
    }
}

TEST_CASE("compute_eer worked examples") {
    CHECK(compute_eer({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}) == 0.0);
    CHECK(compute_eer({0.1, 0.9}, {1, 0}) == 1.0);
    CHECK(compute_eer({0.9, 0.8, 0.85, 0.1}, {1, 1, 0, 0}) == 0.5);
    CHECK_THROWS_AS((void)compute_eer({0.5, 0.6}, {1, 1}), DataError);
}

TEST_CASE("compute_min_dcf worked examples") {
    DCFParams p;
    CHECK(compute_min_dcf({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}, p) == 0.0);
    CHECK(compute_min_dcf({0.4, 0.4, 0.4, 0.4}, {1, 1, 0, 0}, p) ==
          doctest::Approx(1.0).epsilon(1e-12));
    // Raw minimum 0.025 at threshold 0.9; normalized by 0.05.
    CHECK(compute_min_dcf({0.9, 0.8, 0.85, 0.1}, {1, 1, 0, 0}, p) ==
          doctest::Approx(0.5).epsilon(1e-12));
    DCFParams bad = p;
    bad.p_target = 1.0;
    CHECK_THROWS_AS((void)compute_min_dcf({0.9, 0.1}, {1, 0}, bad), ParameterError);
}

TEST_CASE("metrics match the exhaustive oracle on random score sets") {
    Rng rng(808);
    DCFParams p;
    for (int trial = 0; trial < 40; ++trial) {
        const std::int64_t n = 10 + rng.uniform_int(400);
        std::vector<double> scores;
        std::vector<int> labels;
        bool saw_target = false, saw_nontarget = false;
        for (std::int64_t i = 0; i < n; ++i) {
            const bool target = rng.uniform() < 0.4;
            saw_target |= target;
            saw_nontarget |= !target;
            // Quantize some scores to force ties.
            double s = target ? rng.uniform(-0.2, 1.0) : rng.uniform(-1.0, 0.4);
            if (rng.uniform() < 0.3) {
                s = std::round(s * 8.0) / 8.0;
            }
            scores.push_back(s);
            labels.push_back(target ? 1 : 0);
        }
        if (!saw_target || !saw_nontarget) continue;
        CHECK(std::fabs(compute_eer(scores, labels) - oracle_eer(scores, labels)) < 1e-12);
        CHECK(std::fabs(compute_min_dcf(scores, labels, p) - oracle_min_dcf(scores, labels, p)) <
              1e-12);
    }
}

TEST_CASE("metrics are invariant under strictly increasing score transforms") {
    Rng rng(909);
    DCFParams p;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 120; ++i) {
            scores.push_back(rng.uniform(-1.0, 1.0) + (i % 3 == 0 ? 0.4 : 0.0));
            labels.push_back(i % 3 == 0 ? 1 : 0);
        }
        const double eer = compute_eer(scores, labels);
        const double dcf = compute_min_dcf(scores, labels, p);
        auto transformed = scores;
        for (double& s : transformed) s = std::exp(2.0 * s) + 3.0;
        CHECK(compute_eer(transformed, labels) == doctest::Approx(eer).epsilon(1e-12));
        CHECK(compute_min_dcf(transformed, labels, p) == doctest::Approx(dcf).epsilon(1e-12));

        // Normalized minDCF never exceeds the reject-all bound.
        CHECK(dcf <= 1.0 + 1e-12);
    }
}

TEST_CASE("trial list parsing") {
    const auto path = (std::filesystem::temp_directory_path() / "tdy_trials.txt").string();
    {
        std::ofstream out(path);
        out << "1 s1/a.wav s1/b.wav\n";
        out << "\n";
        out << "0 s1/a.wav s2/c.wav\n";
    }
    auto trials = load_trial_list(path);
    REQUIRE(trials.size() == 2);
    CHECK(trials[0].target);
    CHECK(trials[0].path_a == "s1/a.wav");
    CHECK(trials[0].path_b == "s1/b.wav");
    CHECK(!trials[1].target);
    CHECK(trials[1].path_b == "s2/c.wav");

    {
        std::ofstream out(path);
    }
    CHECK(load_trial_list(path).empty());

    {
        std::ofstream out(path);
        out << "1 s1/a.wav s1/b.wav\n";
        out << "2 s1/a.wav s1/b.wav\n";
    }
    CHECK_THROWS_WITH_AS((void)load_trial_list(path), doctest::Contains(":2"), ParseError);
    {
        std::ofstream out(path);
        out << "1 s1/a.wav\n";
    }
    CHECK_THROWS_AS((void)load_trial_list(path), ParseError);
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)load_trial_list(path), IoError);
}

TEST_SUITE_END();
