#include "tdy/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

namespace tdy {

void validate(const TrainConfig& cfg) {
    if (cfg.batch_speakers < 2) {
        throw ParameterError("train: batch_speakers must be >= 2");
    }
    if (cfg.utterances_per_speaker != 2) {
        throw ParameterError("train: utterances_per_speaker is fixed at 2");
    }
    if (!(cfg.lr0 > 0.0) || !(cfg.lr_decay > 0.0) || !(cfg.weight_decay >= 0.0)) {
        throw ParameterError("train: rates must be positive");
    }
    if (cfg.epochs < 1 || cfg.lr_decay_epochs < 1 || cfg.temp_epochs < 1) {
        throw ParameterError("train: epoch counts must be positive");
    }
}

double temperature_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) {
        throw ParameterError("temperature_schedule: negative epoch");
    }
    if (epoch >= cfg.temp_epochs) {
        return cfg.temp_lo;
    }
    return cfg.temp_hi -
           (cfg.temp_hi - cfg.temp_lo) * static_cast<double>(epoch) /
               static_cast<double>(cfg.temp_epochs);
}

double temperature_schedule(int epoch) {
    return temperature_schedule(epoch, TrainConfig{});
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) {
        throw ParameterError("lr_schedule: negative epoch");
    }
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_epochs));
}

APParams::APParams()
    : w(Tensor::scalar(10.0, true)), b(Tensor::scalar(-5.0, true)) {}

void APParams::clamp() {
    w->data[0] = std::max(w->data[0], 1e-6);
}

TensorPtr angular_prototypical_loss(const TensorPtr& embeddings, APParams& ap) {
    if (embeddings->rank() != 3 || embeddings->shape[1] != 2) {
        throw DimensionError("angular_prototypical_loss: expected [N,2,D], got " +
                             embeddings->shape_str());
    }
    const std::int64_t n = embeddings->shape[0], d = embeddings->shape[2];
    auto flat = reshape(embeddings, {n * 2, d});
    std::vector<std::int64_t> proto_rows, query_rows;
    for (std::int64_t j = 0; j < n; ++j) {
        proto_rows.push_back(2 * j);
        query_rows.push_back(2 * j + 1);
    }
    auto protos = rows_l2_normalize(gather_rows(flat, proto_rows));
    auto queries = rows_l2_normalize(gather_rows(flat, query_rows));
    auto cosines = matmul_nt(queries, protos); // [N,N], row j: query j vs prototypes
    auto scores = add_scalar_tensor(mul_scalar_tensor(cosines, ap.w), ap.b);
    std::vector<std::int64_t> diagonal(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) {
        diagonal[static_cast<std::size_t>(j)] = j;
    }
    return cross_entropy(scores, diagonal);
}

TensorPtr combined_loss(const TensorPtr& logits, const std::vector<std::int64_t>& labels,
                        const TensorPtr& embeddings, APParams& ap) {
    return add(cross_entropy(logits, labels), angular_prototypical_loss(embeddings, ap));
}

void adam_step(const std::vector<TensorPtr>& params, AdamState& state, double lr,
               double weight_decay) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (const auto& p : params) {
        if (p->grad.size() != p->data.size()) {
            throw DimensionError("adam_step: parameter has no gradient buffer");
        }
        auto& mom = state.moments[p.get()];
        if (mom.m.size() != p->data.size()) {
            mom.m.assign(p->data.size(), 0.0);
            mom.v.assign(p->data.size(), 0.0);
        }
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            const double g = p->grad[i] + weight_decay * p->data[i];
            mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g;
            mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            p->data[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

BatchSampler::BatchSampler(std::vector<UtteranceFile> files, int n_speakers, int m_utts,
                           std::uint64_t seed)
    : n_(n_speakers), m_(m_utts), seed_(seed) {
    std::map<std::string, std::vector<std::string>> grouped;
    for (const auto& f : files) {
        grouped[f.speaker_id].push_back(f.path);
    }
    for (auto& [speaker, paths] : grouped) {
        if (static_cast<int>(paths.size()) < m_) {
            throw DataError("batch_sampler: speaker " + speaker + " has " +
                            std::to_string(paths.size()) + " utterances, need >= " +
                            std::to_string(m_));
        }
        std::sort(paths.begin(), paths.end());
        speakers_.push_back(speaker);
        by_speaker_.push_back(paths);
    }
    if (static_cast<int>(speakers_.size()) < n_) {
        throw DataError("batch_sampler: dataset has " + std::to_string(speakers_.size()) +
                        " speakers, need >= " + std::to_string(n_));
    }
}

std::vector<Batch> BatchSampler::epoch(int epoch_index) const {
    Rng rng(seed_ * 1000003ULL + static_cast<std::uint64_t>(epoch_index));
    std::vector<std::int64_t> order(speakers_.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = static_cast<std::int64_t>(i);
    }
    rng.shuffle(order);

    // Chunk into groups of N; the remainder group is topped up with distinct
    // speakers not already in it so each speaker appears at least once.
    std::vector<std::vector<std::int64_t>> groups;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(n_)) {
        std::vector<std::int64_t> group(
            order.begin() + static_cast<std::ptrdiff_t>(pos),
            order.begin() + static_cast<std::ptrdiff_t>(
                                std::min(pos + static_cast<std::size_t>(n_), order.size())));
        while (static_cast<int>(group.size()) < n_) {
            const std::int64_t cand = order[static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(order.size())))];
            if (std::find(group.begin(), group.end(), cand) == group.end()) {
                group.push_back(cand);
            }
        }
        groups.push_back(std::move(group));
    }

    std::vector<Batch> batches;
    for (const auto& group : groups) {
        Batch batch;
        for (std::int64_t spk : group) {
            const auto& paths = by_speaker_[static_cast<std::size_t>(spk)];
            std::vector<std::int64_t> idx(paths.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                idx[i] = static_cast<std::int64_t>(i);
            }
            rng.shuffle(idx);
            for (int u = 0; u < m_; ++u) {
                batch.paths.push_back(paths[static_cast<std::size_t>(idx[static_cast<std::size_t>(u)])]);
                batch.labels.push_back(spk);
                batch.crop_seeds.push_back(rng.next_u64());
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

Trainer::Trainer(Model& model, TrainConfig cfg, std::vector<UtteranceFile> files)
    : model_(model), cfg_(cfg),
      sampler_(std::move(files), cfg.batch_speakers, cfg.utterances_per_speaker, cfg.seed) {
    validate(cfg_);
    Rng rng(cfg_.seed ^ 0x5eedf00dULL);
    const std::int64_t d = model_.embedding_dim();
    const std::int64_t s = static_cast<std::int64_t>(sampler_.speakers().size());
    cls_w_ = Tensor::zeros({s, d}, true);
    const double bound = std::sqrt(6.0 / static_cast<double>(d));
    for (double& v : cls_w_->data) {
        v = rng.uniform(-bound, bound);
    }
    cls_b_ = Tensor::zeros({s}, true);
}

Batch Trainer::make_inputs(const Batch& batch, TensorPtr& x) const {
    const std::int64_t b = static_cast<std::int64_t>(batch.paths.size());
    const std::int64_t frames = log_mel_frame_count(kTrainCropSamples);
    x = Tensor::zeros({b, 1, kMelBins, frames});
    for (std::int64_t i = 0; i < b; ++i) {
        auto wav = load_wav(batch.paths[static_cast<std::size_t>(i)]);
        auto crop = sample_segments(wav, SegmentMode::Train,
                                    batch.crop_seeds[static_cast<std::size_t>(i)])
                        .front();
        auto mel = normalize_per_freq(log_mel(crop));
        std::copy(mel.values->data.begin(), mel.values->data.end(),
                  x->data.begin() + i * kMelBins * frames);
    }
    return batch;
}

void Trainer::run(std::ostream* log) {
    std::vector<TensorPtr> params;
    for (auto& [name, p] : model_.named_parameters()) {
        (void)name;
        params.push_back(p);
    }
    params.push_back(cls_w_);
    params.push_back(cls_b_);
    params.push_back(ap_.w);
    params.push_back(ap_.b);

    epoch_stats_.clear();
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        const double tau = temperature_schedule(epoch, cfg_);
        const double lr = lr_schedule(epoch, cfg_);
        model_.set_temperature(tau);
        EpochStats stats;
        int steps = 0;
        auto batches = sampler_.epoch(epoch);
        for (std::size_t step = 0; step < batches.size(); ++step) {
            TensorPtr x;
            make_inputs(batches[step], x);
            const auto& labels = batches[step].labels;
            const std::int64_t n = cfg_.batch_speakers;

            GradTape tape;
            TensorPtr loss, ce, ap;
            {
                GradTape::Scope scope(tape);
                auto emb = model_.forward_embeddings(x, BatchNormMode::Train);
                auto logits = affine(emb, cls_w_, cls_b_);
                ce = cross_entropy(logits, labels);
                ap = angular_prototypical_loss(
                    reshape(emb, {n, 2, model_.embedding_dim()}), ap_);
                loss = add(ce, ap);
                assert_finite(*loss, "training loss");
                tape.backward(loss);
            }
            adam_step(params, adam_, lr, cfg_.weight_decay);
            ap_.clamp();
            for (auto& p : params) {
                p->zero_grad();
            }
            if (log != nullptr) {
                (*log) << epoch << '\t' << step << '\t' << lr << '\t' << tau << '\t'
                       << loss->data[0] << '\t' << ce->data[0] << '\t' << ap->data[0] << '\n';
                log->flush();
            }
            stats.mean_loss += loss->data[0];
            stats.mean_ce += ce->data[0];
            stats.mean_ap += ap->data[0];
            ++steps;
        }
        stats.mean_loss /= steps;
        stats.mean_ce /= steps;
        stats.mean_ap /= steps;
        epoch_stats_.push_back(stats);
    }
}

} // namespace tdy
