// End-to-end acceptance suite. Each criterion prints one pass/fail line;
// the process exits with the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tdy/commands.hpp"
#include "tdy/config.hpp"
#include "tdy/eval.hpp"
#include "tdy/phoneme.hpp"
#include "tdy/synth.hpp"

using namespace tdy;

namespace fs = std::filesystem;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct Criterion {
    int id;
    std::string detail;
    bool ok;
};

std::vector<Criterion> g_results;

void report(int id, bool ok, const std::string& detail) {
    g_results.push_back({id, detail, ok});
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << detail
              << std::endl;
}

TensorPtr random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0,
                        double hi = 1.0, bool requires_grad = false) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t->data) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

double max_grad_rel_error(const std::function<TensorPtr()>& forward,
                          const std::vector<TensorPtr>& leaves, Rng& rng,
                          int coords_per_leaf = 20, double h = 1e-5) {
    for (const auto& leaf : leaves) {
        leaf->ensure_grad();
        leaf->zero_grad();
    }
    GradTape tape;
    {
        GradTape::Scope scope(tape);
        tape.backward(forward());
    }
    double worst = 0.0;
    for (const auto& leaf : leaves) {
        const std::int64_t n = leaf->size();
        for (int c = 0; c < coords_per_leaf; ++c) {
            const std::int64_t i = n == 1 ? 0 : rng.uniform_int(n);
            const double saved = leaf->data[static_cast<std::size_t>(i)];
            leaf->data[static_cast<std::size_t>(i)] = saved + h;
            const double fp = forward()->data[0];
            leaf->data[static_cast<std::size_t>(i)] = saved - h;
            const double fm = forward()->data[0];
            leaf->data[static_cast<std::size_t>(i)] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = leaf->grad[static_cast<std::size_t>(i)];
            const double denom = std::max(std::fabs(numeric), std::fabs(analytic));
            if (denom < 1e-7) continue;
            worst = std::max(worst, std::fabs(numeric - analytic) / denom);
        }
    }
    return worst;
}

// --------------------------------------------------------------------------
// Criterion 1: Eq. (1)-(2) reordering equivalence over random configurations
// --------------------------------------------------------------------------
void criterion_1() {
    const double t0 = now_seconds();
    Rng rng(11);
    const int kchoices[5] = {1, 2, 4, 6, 8};
    double worst = 0.0;
    int configs = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int k = kchoices[trial % 5];
        const std::int64_t c_in = 1 + rng.uniform_int(3);
        const std::int64_t c_out = 1 + rng.uniform_int(4);
        const std::int64_t kh = 1 + 2 * rng.uniform_int(2);
        const std::int64_t kw = 1 + 2 * rng.uniform_int(2);
        Conv2dSpec spec{1 + rng.uniform_int(2), 1 + rng.uniform_int(2), rng.uniform_int(2),
                        rng.uniform_int(2)};
        const std::int64_t f = kh + rng.uniform_int(6);
        const std::int64_t t = kw + rng.uniform_int(10);
        const TimePad pad = trial % 3 == 2 ? TimePad::Wrap : TimePad::Zero;
        TDYConvLayer layer(c_in, f, c_out, kh, kw, k, spec, rng, 1.0 + 30.0 * rng.uniform(),
                           pad);
        auto x = random_tensor({c_in, f, t}, rng);
        auto [y, map] = tdy_conv_forward(x, layer);
        auto oracle = adaptive_kernel_oracle(x, layer, map);
        for (std::size_t i = 0; i < y->data.size(); ++i) {
            worst = std::max(worst, std::fabs(y->data[i] - oracle->data[i]));
        }
        ++configs;
    }
    const double elapsed = now_seconds() - t0;
    std::ostringstream detail;
    detail << "tdy forward vs adaptive-kernel oracle, " << configs
           << " random configs (K in {1,2,4,6,8}), max |diff| = " << worst << " (tol 1e-10), "
           << elapsed << "s";
    report(1, worst < 1e-10 && elapsed < 60.0, detail.str());
}

// --------------------------------------------------------------------------
// Criterion 2: finite-difference gradient suite
// --------------------------------------------------------------------------
void criterion_2() {
    const double t0 = now_seconds();
    Rng rng(22);
    double worst = 0.0;
    std::ostringstream failed_ops;

    auto check = [&](const char* name, const std::function<TensorPtr()>& fwd,
                     const std::vector<TensorPtr>& leaves, int coords = 20) {
        const double err = max_grad_rel_error(fwd, leaves, rng, coords);
        worst = std::max(worst, err);
        if (err >= 1e-4) {
            failed_ops << name << " ";
        }
    };

    {
        auto x = random_tensor({2, 3, 6, 7}, rng, -1.0, 1.0, true);
        auto w = random_tensor({4, 3, 3, 3}, rng, -1.0, 1.0, true);
        auto b = random_tensor({4}, rng, -1.0, 1.0, true);
        auto probe = random_tensor({2, 4, 3, 4}, rng);
        check("conv2d", [&] { return sum_all(mul(conv2d(x, w, b, {2, 2, 1, 1}), probe)); },
              {x, w, b});
    }
    {
        auto x = random_tensor({5, 6}, rng, -1.0, 1.0, true);
        auto w = random_tensor({4, 6}, rng, -1.0, 1.0, true);
        auto b = random_tensor({4}, rng, -1.0, 1.0, true);
        auto probe = random_tensor({5, 4}, rng);
        check("affine", [&] { return sum_all(mul(affine(x, w, b), probe)); }, {x, w, b});
    }
    {
        auto x = random_tensor({3, 2, 4, 5}, rng, -1.5, 1.5, true);
        BatchNorm bn(2);
        bn.gamma->data = {1.2, 0.7};
        bn.beta->data = {0.1, -0.3};
        auto probe = random_tensor({3, 2, 4, 5}, rng);
        check("batch_norm",
              [&] { return sum_all(mul(batch_norm(x, bn, BatchNormMode::Train), probe)); },
              {x, bn.gamma, bn.beta});
    }
    {
        auto z = random_tensor({4, 6}, rng, -2.0, 2.0, true);
        auto probe = random_tensor({4, 6}, rng);
        for (double tau : {1.0, 31.0}) {
            check("softmax_tempered",
                  [&] { return sum_all(mul(softmax_tempered(z, tau), probe)); }, {z});
        }
    }
    {
        Rng lr(23);
        TDYConvLayer layer(2, 4, 3, 3, 3, 3, {1, 1, 1, 1}, lr, 3.0);
        auto x = random_tensor({1, 2, 4, 6}, rng, -1.0, 1.0, true);
        auto probe = random_tensor({1, 3, 4, 6}, rng);
        auto leaves = layer.parameters();
        leaves.push_back(x);
        check("tdy_layer",
              [&] {
                  auto [out, attn] = layer.forward_batched(x, AttentionScope::Frame);
                  (void)attn;
                  return sum_all(mul(out, probe));
              },
              leaves, 10);
    }
    {
        auto emb = random_tensor({3, 2, 5}, rng, 0.2, 1.0, true);
        APParams ap;
        check("ap_loss", [&] { return angular_prototypical_loss(emb, ap); },
              {emb, ap.w, ap.b});
    }
    {
        auto logits = random_tensor({6, 7}, rng, -1.0, 1.0, true);
        auto emb = random_tensor({3, 2, 5}, rng, 0.2, 1.0, true);
        APParams ap;
        std::vector<std::int64_t> labels{0, 0, 3, 3, 6, 6};
        check("combined_loss", [&] { return combined_loss(logits, labels, emb, ap); },
              {logits, emb, ap.w, ap.b});
    }
    const double elapsed = now_seconds() - t0;
    std::ostringstream detail;
    detail << "finite-difference checks (conv, affine, batch norm, tempered softmax, "
              "TDY layer, AP loss, combined loss), max rel err = "
           << worst << " (tol 1e-4), " << elapsed << "s";
    if (failed_ops.str().size() > 0) {
        detail << ", failed: " << failed_ops.str();
    }
    report(2, worst < 1e-4 && elapsed < 120.0, detail.str());
}

// --------------------------------------------------------------------------
// Criterion 3: softmax constraint and K=1 degeneracy
// --------------------------------------------------------------------------
void criterion_3() {
    Rng rng(33);
    double worst_sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        auto logits = random_tensor({6}, rng, -20.0, 20.0);
        auto soft = softmax_tempered(logits, i % 2 == 0 ? 1.0 : 31.0);
        double s = 0.0;
        for (double v : soft->data) s += v;
        worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
    }

    TDYConvLayer layer(2, 5, 3, 3, 3, 1, {1, 1, 1, 1}, rng, 31.0);
    auto x = random_tensor({2, 5, 9}, rng);
    auto [y, map] = tdy_conv_forward(x, layer);
    (void)map;
    auto direct = relu(conv2d(x, layer.basis_kernels[0], layer.basis_biases[0], {1, 1, 1, 1}));
    double worst_deg = 0.0;
    for (std::size_t i = 0; i < y->data.size(); ++i) {
        worst_deg = std::max(worst_deg, std::fabs(y->data[i] - direct->data[i]));
    }
    std::ostringstream detail;
    detail << "1e4 attention columns sum to 1 (max dev " << worst_sum
           << ", tol 1e-12); K=1 TDY layer vs static conv+relu max |diff| = " << worst_deg
           << " (tol 1e-12)";
    report(3, worst_sum <= 1e-12 && worst_deg <= 1e-12, detail.str());
}

// --------------------------------------------------------------------------
// Criterion 4: schedules
// --------------------------------------------------------------------------
void criterion_4() {
    TrainConfig cfg;
    const bool temp_ok = temperature_schedule(0) == 31.0 && temperature_schedule(5) == 16.0 &&
                         temperature_schedule(10) == 1.0 && temperature_schedule(17) == 1.0;
    const bool lr_ok = lr_schedule(0, cfg) == 1e-3 && lr_schedule(15, cfg) == 7.5e-4;
    std::ostringstream detail;
    detail << "temperature (0->31, 5->16, >=10->1) " << (temp_ok ? "exact" : "WRONG")
           << "; lr (0->1e-3, 15->7.5e-4) " << (lr_ok ? "exact" : "WRONG");
    report(4, temp_ok && lr_ok, detail.str());
}

// --------------------------------------------------------------------------
// Criterion 5: metric oracles
// --------------------------------------------------------------------------
struct SweepPoint {
    double far, frr;
};

std::vector<SweepPoint> oracle_points(const std::vector<double>& scores,
                                      const std::vector<int>& labels,
                                      std::vector<double>& thresholds) {
    thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(std::numeric_limits<double>::infinity());
    std::vector<SweepPoint> pts;
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
        pts.push_back({static_cast<double>(fa) / non, static_cast<double>(miss) / tar});
    }
    return pts;
}

double oracle_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> th;
    auto pts = oracle_points(scores, labels, th);
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].frr >= pts[i].far) {
            const double d1 = pts[i - 1].far - pts[i - 1].frr;
            const double d2 = pts[i].far - pts[i].frr;
            if (d2 == 0.0) return pts[i].far;
            return pts[i - 1].far + d1 / (d1 - d2) * (pts[i].far - pts[i - 1].far);
        }
    }
    return 1.0;
}

double oracle_min_dcf(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> th;
    auto pts = oracle_points(scores, labels, th);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) {
        best = std::min(best, p.frr * 0.05 + p.far * 0.95);
    }
    return best / 0.05;
}

void criterion_5() {
    Rng rng(55);
    double worst = 0.0;
    int sets = 0;
    while (sets < 100) {
        const std::int64_t n = 20 + rng.uniform_int(981);
        std::vector<double> scores;
        std::vector<int> labels;
        int targets = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            const bool target = rng.uniform() < 0.35;
            targets += target;
            double s = target ? rng.uniform(-0.3, 1.0) : rng.uniform(-1.0, 0.5);
            if (rng.uniform() < 0.25) {
                s = std::round(s * 10.0) / 10.0;
            }
            scores.push_back(s);
            labels.push_back(target ? 1 : 0);
        }
        if (targets == 0 || targets == n) continue;
        ++sets;
        worst = std::max(worst, std::fabs(compute_eer(scores, labels) -
                                          oracle_eer(scores, labels)));
        worst = std::max(worst, std::fabs(compute_min_dcf(scores, labels, DCFParams{}) -
                                          oracle_min_dcf(scores, labels)));
    }

    DCFParams p; // c_miss = 1, c_fa = 1, p_target = 0.05
    const bool examples_ok =
        compute_eer({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}) == 0.0 &&
        compute_eer({0.1, 0.9}, {1, 0}) == 1.0 &&
        compute_eer({0.9, 0.8, 0.85, 0.1}, {1, 1, 0, 0}) == 0.5 &&
        compute_min_dcf({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}, p) == 0.0 &&
        std::fabs(compute_min_dcf({0.4, 0.4, 0.4, 0.4}, {1, 1, 0, 0}, p) - 1.0) < 1e-12 &&
        std::fabs(compute_min_dcf({0.9, 0.8, 0.85, 0.1}, {1, 1, 0, 0}, p) - 0.5) < 1e-12;

    std::ostringstream detail;
    detail << "EER/minDCF vs exhaustive threshold oracle on 100 score sets, max |diff| = "
           << worst << " (tol 1e-12); worked examples (0/1.0/0.5 and 0/1.0/0.5) "
           << (examples_ok ? "exact" : "WRONG");
    report(5, worst < 1e-12 && examples_ok, detail.str());
}

// --------------------------------------------------------------------------
// Criterion 6: parameter structure
// --------------------------------------------------------------------------
void criterion_6() {
    ModelConfig cfg; // resnet-toy x0.25, K=6, D=128
    ModelConfig stat = cfg;
    stat.conv_mode = ConvMode::Static;
    const auto n_static = count_parameters(stat);
    const auto n_tdy = count_parameters(cfg);
    const double ratio = static_cast<double>(n_tdy) / static_cast<double>(n_static);

    Rng rng(66);
    auto w = Tensor::zeros({32, 16, 3, 3});
    auto b = Tensor::zeros({32});
    const std::int64_t static_example = w->size() + b->size();
    TDYConvLayer layer(16, 8, 32, 3, 3, 6, {1, 1, 1, 1}, rng);
    std::int64_t tdy_example = 0;
    for (const auto& param : layer.parameters()) {
        tdy_example += param->size();
    }
    std::ostringstream detail;
    detail << "matched toy static/tdy (K=6): " << n_static << " -> " << n_tdy << ", ratio "
           << ratio << " in [6,8] (paper-scale reference 13.3M/1.86M = 7.15); single-layer "
           << "example " << static_example << " -> " << tdy_example << " (want 4640 -> 30006)";
    report(6, ratio >= 6.0 && ratio <= 8.0 && static_example == 4640 && tdy_example == 30006,
           detail.str());
}

// --------------------------------------------------------------------------
// Criteria 7-8: end-to-end smoke training, verification, phonemic analysis
// --------------------------------------------------------------------------
struct SmokeOutcome {
    bool trained = false;
    double train_seconds = 0.0;
    std::map<int, double> tdy_eer;    // seed -> EER
    std::map<int, double> static_eer; // seed -> EER
    std::map<int, std::string> tdy_checkpoints;
    std::string train_root;
};

SmokeOutcome run_smoke(const fs::path& work) {
    SmokeOutcome outcome;

    SynthSpec train_spec;
    train_spec.num_speakers = 20;
    train_spec.utterances_per_speaker = 6;
    train_spec.seed = 101;
    train_spec.min_seconds = 2.2;
    train_spec.max_seconds = 3.4;
    const std::string train_root = (work / "train_corpus").string();
    cmd_synth(train_spec, train_root);
    outcome.train_root = train_root;

    SynthSpec eval_spec;
    eval_spec.num_speakers = 10;
    eval_spec.utterances_per_speaker = 4;
    eval_spec.seed = 202;
    eval_spec.min_seconds = 2.5;
    eval_spec.max_seconds = 4.5;
    const std::string eval_root = (work / "eval_corpus").string();
    cmd_synth(eval_spec, eval_root);

    // 200 held-out trials: all 60 same-speaker pairs plus 140 cross pairs.
    auto eval_files = scan_dataset(eval_root);
    std::map<std::string, std::vector<std::string>> by_speaker;
    for (const auto& f : eval_files) {
        by_speaker[f.speaker_id].push_back(f.path);
    }
    const std::string trial_path = (work / "trials.txt").string();
    {
        std::ofstream trials(trial_path);
        int count = 0;
        for (const auto& [spk, paths] : by_speaker) {
            for (std::size_t i = 0; i < paths.size(); ++i) {
                for (std::size_t j = i + 1; j < paths.size(); ++j) {
                    trials << "1 " << paths[i] << " " << paths[j] << "\n";
                    ++count;
                }
            }
        }
        Rng rng(7);
        std::set<std::pair<std::size_t, std::size_t>> used;
        while (count < 200) {
            const auto a = static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(eval_files.size())));
            const auto b = static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(eval_files.size())));
            if (eval_files[a].speaker_id == eval_files[b].speaker_id || !used.insert({a, b}).second) {
                continue;
            }
            trials << "0 " << eval_files[a].path << " " << eval_files[b].path << "\n";
            ++count;
        }
    }

    ModelConfig model_cfg; // resnet-toy x0.25, K=6, D=128
    TrainConfig train_cfg;
    train_cfg.batch_speakers = 5;
    train_cfg.epochs = 10;

    for (int seed : {1, 2, 3}) {
        for (ConvMode mode : {ConvMode::Tdy, ConvMode::Static}) {
            ModelConfig mc = model_cfg;
            mc.conv_mode = mode;
            TrainConfig tc = train_cfg;
            tc.seed = static_cast<std::uint64_t>(seed);
            const std::string run_dir =
                (work / (to_string(mode) + "_seed" + std::to_string(seed))).string();
            const double t0 = now_seconds();
            auto train_outcome = cmd_train(mc, tc, train_root, run_dir);
            const double train_time = now_seconds() - t0;
            outcome.train_seconds = std::max(outcome.train_seconds, train_time);
            std::ostringstream devnull;
            auto report = cmd_eval(train_outcome.checkpoint_path, trial_path, "",
                                   run_dir + "/eval", devnull);
            std::cerr << "  " << to_string(mode) << " seed " << seed << ": EER "
                      << report.eer << " minDCF " << report.min_dcf_normalized << " (train "
                      << train_time << "s)\n";
            if (mode == ConvMode::Tdy) {
                outcome.tdy_eer[seed] = report.eer;
                outcome.tdy_checkpoints[seed] = train_outcome.checkpoint_path;
            } else {
                outcome.static_eer[seed] = report.eer;
            }
        }
    }
    outcome.trained = true;
    return outcome;
}

void criterion_7(const SmokeOutcome& smoke) {
    if (!smoke.trained) {
        report(7, false, "smoke pipeline did not complete");
        return;
    }
    double worst_eer = 0.0;
    int wins = 0;
    std::ostringstream eers;
    for (int seed : {1, 2, 3}) {
        const double te = smoke.tdy_eer.at(seed);
        const double se = smoke.static_eer.at(seed);
        worst_eer = std::max(worst_eer, te);
        wins += te <= se ? 1 : 0;
        eers << "seed" << seed << " tdy=" << te << "/static=" << se << " ";
    }
    std::ostringstream detail;
    detail << "synth(20 spk) -> train(tdy toy, 10 epochs, max "
           << smoke.train_seconds << "s) -> eval(200 trials, 10x10 cosine): " << eers.str()
           << "- worst tdy EER " << worst_eer << " < 0.10; tdy <= static in " << wins
           << "/3 seeds (need >= 2)";
    report(7, worst_eer < 0.10 && wins >= 2 && smoke.train_seconds < 600.0, detail.str());
}

void criterion_8(const SmokeOutcome& smoke, const fs::path& work) {
    if (!smoke.trained) {
        report(8, false, "smoke pipeline did not complete");
        return;
    }
    // Analysis corpus: a slice of the training corpus (three speakers).
    const std::string analysis_root = (work / "analysis_corpus").string();
    fs::create_directories(analysis_root);
    for (int s = 0; s < 3; ++s) {
        char name[16];
        std::snprintf(name, sizeof name, "spk%03d", s);
        fs::copy(fs::path(smoke.train_root) / name, fs::path(analysis_root) / name,
                 fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    }

    int trend_wins = 0;
    bool reproducible = true;
    std::ostringstream detail;
    for (int seed : {1, 2, 3}) {
        Model model = load_checkpoint(smoke.tdy_checkpoints.at(seed));
        AnalysisOptions opts; // default layers: first, middle, last; split by speaker
        const std::string out_a = (work / ("analysis_a_seed" + std::to_string(seed))).string();
        auto result = export_analysis(model, analysis_root, out_a, opts);

        const int first_layer = 0;
        const int last_layer = static_cast<int>(model.dynamic_layers().size()) - 1;
        double early = 0.0, late = 0.0;
        int early_n = 0, late_n = 0;
        for (const auto& row : result.summary) {
            if (row.layer_id == first_layer) {
                early += row.dispersion;
                ++early_n;
            } else if (row.layer_id == last_layer) {
                late += row.dispersion;
                ++late_n;
            }
        }
        early /= std::max(early_n, 1);
        late /= std::max(late_n, 1);
        trend_wins += early > late ? 1 : 0;
        detail << "seed" << seed << " early=" << early << "/late=" << late << " ";

        if (seed == 1) {
            const std::string out_b = (work / "analysis_b_seed1").string();
            auto again = export_analysis(model, analysis_root, out_b, opts);
            for (std::size_t i = 0; i < result.files_written.size() && reproducible; ++i) {
                std::ifstream fa(result.files_written[i], std::ios::binary);
                std::ifstream fb(again.files_written[i], std::ios::binary);
                std::stringstream sa, sb;
                sa << fa.rdbuf();
                sb << fb.rdbuf();
                reproducible = sa.str() == sb.str();
            }
        }
    }
    std::ostringstream line;
    line << "dispersion ratio earliest vs last TDY layer: " << detail.str() << "- early > late in "
         << trend_wins << "/3 seeds (need >= 2); CSVs byte-reproducible: "
         << (reproducible ? "yes" : "NO");
    report(8, trend_wins >= 2 && reproducible, line.str());
}

// --------------------------------------------------------------------------
// Criterion 9: frontend shape law and normalization
// --------------------------------------------------------------------------
void criterion_9() {
    Rng rng(99);
    bool shape_ok = true;
    for (int i = 0; i < 8; ++i) {
        const std::int64_t len = 400 + rng.uniform_int(50000);
        Waveform w;
        w.samples.assign(static_cast<std::size_t>(len), 0.0);
        for (double& v : w.samples) v = rng.uniform(-0.3, 0.3);
        auto mel = log_mel(w);
        shape_ok = shape_ok && mel.values->shape[1] == (len - 400) / 160 + 1;
    }
    for (int i = 0; i < 2000; ++i) {
        const std::int64_t len = 400 + rng.uniform_int(1000000 - 399);
        shape_ok = shape_ok && log_mel_frame_count(len) == (len - 400) / 160 + 1;
    }

    Waveform two_s;
    two_s.samples.assign(32000, 0.0);
    for (double& v : two_s.samples) v = rng.uniform(-0.5, 0.5);
    auto mel2 = log_mel(two_s);
    const bool exact_ok = mel2.values->shape == std::vector<std::int64_t>{64, 198};

    auto norm = normalize_per_freq(mel2);
    double worst_mean = 0.0, worst_var = 0.0;
    const std::int64_t t = norm.values->shape[1];
    for (std::int64_t row = 0; row < 64; ++row) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t i = 0; i < t; ++i) {
            mean += norm.values->data[static_cast<std::size_t>(row * t + i)];
        }
        mean /= static_cast<double>(t);
        for (std::int64_t i = 0; i < t; ++i) {
            const double d = norm.values->data[static_cast<std::size_t>(row * t + i)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(t);
        worst_mean = std::max(worst_mean, std::fabs(mean));
        worst_var = std::max(worst_var, std::fabs(var - 1.0));
    }
    std::ostringstream detail;
    detail << "shape law over random lengths " << (shape_ok ? "holds" : "BROKEN")
           << "; 2s -> (64,198) " << (exact_ok ? "exact" : "WRONG")
           << "; per-row |mean| max " << worst_mean << " (tol 1e-9), |var-1| max " << worst_var
           << " (tol 1e-6)";
    report(9, shape_ok && exact_ok && worst_mean < 1e-9 && worst_var < 1e-6, detail.str());
}

} // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "tdy_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    auto guard = [](int id, const std::function<void()>& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(id, false, std::string("exception: ") + e.what());
        }
    };

    guard(1, [] { criterion_1(); });
    guard(2, [] { criterion_2(); });
    guard(3, [] { criterion_3(); });
    guard(4, [] { criterion_4(); });
    guard(5, [] { criterion_5(); });
    guard(6, [] { criterion_6(); });

    SmokeOutcome smoke;
    try {
        std::cerr << "running end-to-end smoke pipeline (3 seeds x {tdy, static})...\n";
        smoke = run_smoke(work);
    } catch (const std::exception& e) {
        std::cerr << "smoke pipeline failed: " << e.what() << "\n";
    }
    guard(7, [&] { criterion_7(smoke); });
    guard(8, [&] { criterion_8(smoke, work); });
    guard(9, [] { criterion_9(); });

    int failures = 0;
    for (const auto& c : g_results) {
        failures += c.ok ? 0 : 1;
    }
    std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: " + std::to_string(failures))
              << std::endl;
    fs::remove_all(work);
    return failures;
}
