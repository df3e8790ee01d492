#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "tdy/audio.hpp"
#include "tdy/model.hpp"
#include "tdy/tensor.hpp"

namespace tdy {

struct TrainConfig {
    double lr0 = 1e-3;
    double lr_decay = 0.75;
    int lr_decay_epochs = 15;
    double weight_decay = 5e-5;
    int batch_speakers = 5;        // N distinct speakers per batch
    int utterances_per_speaker = 2;// M, fixed at 2 (prototype + query)
    int epochs = 12;
    double temp_hi = 31.0;
    double temp_lo = 1.0;
    int temp_epochs = 10;
    std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

/// Softmax temperature annealing: 31 at epoch 0, linearly down to 1 by
/// epoch 10, constant 1 afterwards.
double temperature_schedule(int epoch);
double temperature_schedule(int epoch, const TrainConfig& cfg);

/// lr0 * decay^floor(epoch / decay_epochs).
double lr_schedule(int epoch, const TrainConfig& cfg);

/// Learnable cosine-similarity scale and offset of the angular
/// prototypical loss. w stays positive (clamped at 1e-6).
struct APParams {
    TensorPtr w; // init 10
    TensorPtr b; // init -5

    APParams();
    void clamp();
};

/// Angular prototypical loss over embeddings [N, M=2, D]: element 1 of each
/// speaker is the prototype, element 2 the query; S[j,k] = w*cos(q_j, c_k)+b;
/// mean cross entropy of the matched speaker on each row.
TensorPtr angular_prototypical_loss(const TensorPtr& embeddings, APParams& ap);

/// cross_entropy(logits, labels) + angular_prototypical_loss(embeddings).
TensorPtr combined_loss(const TensorPtr& logits, const std::vector<std::int64_t>& labels,
                        const TensorPtr& embeddings, APParams& ap);

/// Adam with bias correction; weight decay enters as an L2 term added to the
/// gradient before the moment updates.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;

    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::unordered_map<const Tensor*, Moments> moments;
};

void adam_step(const std::vector<TensorPtr>& params, AdamState& state, double lr,
               double weight_decay);

struct Batch {
    std::vector<std::string> paths;        // N*M utterances, speaker-major
    std::vector<std::int64_t> labels;      // speaker index per utterance
    std::vector<std::uint64_t> crop_seeds; // train-crop seed per utterance
};

/// Seeded speaker-balanced batches: each batch holds N distinct speakers
/// with M distinct utterances each; every speaker appears at least once per
/// epoch.
class BatchSampler {
public:
    BatchSampler(std::vector<UtteranceFile> files, int n_speakers, int m_utts,
                 std::uint64_t seed);

    std::vector<Batch> epoch(int epoch_index) const;
    const std::vector<std::string>& speakers() const { return speakers_; }

private:
    std::vector<std::string> speakers_;
    std::vector<std::vector<std::string>> by_speaker_;
    int n_;
    int m_;
    std::uint64_t seed_;
};

struct EpochStats {
    double mean_loss = 0.0;
    double mean_ce = 0.0;
    double mean_ap = 0.0;
};

/// Owns the classifier head and AP parameters; optimizes the model on a
/// dataset of labeled utterances. Log lines are tab-separated
/// `epoch step lr tau loss ce ap`, flushed per step.
class Trainer {
public:
    Trainer(Model& model, TrainConfig cfg, std::vector<UtteranceFile> files);

    void run(std::ostream* log = nullptr);
    const std::vector<EpochStats>& epoch_stats() const { return epoch_stats_; }
    const APParams& ap_params() const { return ap_; }

private:
    Batch make_inputs(const Batch& batch, TensorPtr& x) const;

    Model& model_;
    TrainConfig cfg_;
    BatchSampler sampler_;
    TensorPtr cls_w_, cls_b_;
    APParams ap_;
    AdamState adam_;
    std::vector<EpochStats> epoch_stats_;
};

} // namespace tdy
