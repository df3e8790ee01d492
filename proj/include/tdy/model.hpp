#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tdy/audio.hpp"
#include "tdy/dynconv.hpp"
#include "tdy/tensor.hpp"

namespace tdy {

enum class ConvMode { Static, Dy, Tdy };

std::string to_string(ConvMode mode);
ConvMode conv_mode_from_string(const std::string& s);

struct ModelConfig {
    std::string family = "resnet";         // resnet | vgg
    std::vector<int> depth = {1, 1, 1, 1}; // resnet blocks per stage
    double channel_scale = 0.25;
    ConvMode conv_mode = ConvMode::Tdy;
    int k = 6;
    std::int64_t embedding_dim = 128;
};

std::string canonical_config_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

struct SpeakerEmbedding {
    TensorPtr vector; // [embedding_dim]
    std::string speaker_id;
};

/// One conv + batch-norm unit. Static units apply relu between conv and BN;
/// dynamic units use the TDY/DY layer, whose activation is internal.
struct ConvUnit {
    std::string name;
    TensorPtr weight; // static path
    TensorPtr bias;
    std::shared_ptr<TDYConvLayer> dyn; // dynamic path
    Conv2dSpec spec;
    TimePad time_pad = TimePad::Wrap;
    std::unique_ptr<BatchNorm> bn;
    int dyn_index = -1;
    std::int64_t stride_cum_t = 1; // cumulative time stride at this unit's output
};

struct DynLayerInfo {
    int index;
    std::string name;
    std::int64_t time_stride; // cumulative, in mel frames per output bin
    TDYConvLayer* layer;
};

/// Toy-scale speaker embedding network. The stem is always a static 3x3
/// stride-1 conv; every other conv follows conv_mode. The frequency axis is
/// reduced by strided convs and collapsed by mean before the embedding
/// projection; utterance embeddings are the time average of frame embeddings.
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    /// Batched forward to utterance embeddings: [N,1,64,T] -> [N,D].
    /// When `maps` is non-null it receives, per dynamic layer, the per-sample
    /// attention maps.
    TensorPtr forward_embeddings(const TensorPtr& x, BatchNormMode mode,
                                 std::vector<std::vector<AttentionMap>>* maps = nullptr);

    /// Frame-level forward of one utterance: [1,1,64,T] -> [T_f, D].
    TensorPtr forward_frames(const TensorPtr& x, BatchNormMode mode,
                             std::vector<AttentionMap>* maps = nullptr);

    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
    /// Parameters plus batch-norm running statistics, for checkpointing.
    std::vector<std::pair<std::string, std::vector<double>*>> named_state() const;

    const std::vector<DynLayerInfo>& dynamic_layers() const { return dyn_layers_; }
    void set_temperature(double tau);

    std::int64_t embedding_dim() const { return cfg_.embedding_dim; }
    std::int64_t final_time_stride() const { return final_stride_t_; }

private:
    struct Block {
        ConvUnit conv1;
        ConvUnit conv2;
        std::unique_ptr<ConvUnit> shortcut; // 1x1 downsample when shape changes
    };

    ConvUnit make_unit(const std::string& name, std::int64_t c_in, std::int64_t f_in,
                       std::int64_t c_out, std::int64_t kh, std::int64_t kw, Conv2dSpec spec,
                       bool dynamic, Rng& rng);
    TensorPtr unit_forward(ConvUnit& u, const TensorPtr& x, BatchNormMode mode,
                           std::vector<std::vector<AttentionMap>>* maps);
    TensorPtr backbone(const TensorPtr& x, BatchNormMode mode,
                       std::vector<std::vector<AttentionMap>>* maps);

    ModelConfig cfg_;
    std::uint64_t seed_;
    ConvUnit stem_;
    std::vector<std::vector<Block>> stages_; // resnet
    std::vector<ConvUnit> vgg_units_;        // vgg
    TensorPtr proj_w_, proj_b_;
    std::vector<DynLayerInfo> dyn_layers_;
    std::int64_t final_stride_t_ = 1;
    std::int64_t final_channels_ = 0;
};

Model build_model(const ModelConfig& cfg, std::uint64_t seed);

SpeakerEmbedding embed_utterance(Model& model, const MelSpectrogram& mel);

/// Frame-level embeddings [D, T_f]; attention maps keyed by dynamic layer
/// index arrive through `maps` when non-null.
TensorPtr embed_frames(Model& model, const MelSpectrogram& mel,
                       std::vector<AttentionMap>* maps = nullptr);

std::int64_t count_parameters(const Model& model);
std::int64_t count_parameters(const ModelConfig& cfg);

/// Versioned binary container: magic "TDY1", canonical config text, then
/// little-endian float64 blobs per state entry, sorted by name. Bit-exact
/// round trip.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

} // namespace tdy
