#include "tdy/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tdy {

std::string to_string(ConvMode mode) {
    switch (mode) {
    case ConvMode::Static: return "static";
    case ConvMode::Dy: return "dy";
    case ConvMode::Tdy: return "tdy";
    }
    return "static";
}

ConvMode conv_mode_from_string(const std::string& s) {
    if (s == "static") return ConvMode::Static;
    if (s == "dy") return ConvMode::Dy;
    if (s == "tdy") return ConvMode::Tdy;
    throw ParameterError("unknown conv mode '" + s + "' (want static|dy|tdy)");
}

std::string canonical_config_text(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "[model]\n";
    os << "family = " << cfg.family << "\n";
    os << "depth = ";
    for (std::size_t i = 0; i < cfg.depth.size(); ++i) {
        os << (i ? "," : "") << cfg.depth[i];
    }
    os << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", cfg.channel_scale);
    os << "channel_scale = " << buf << "\n";
    os << "conv_mode = " << to_string(cfg.conv_mode) << "\n";
    os << "k = " << cfg.k << "\n";
    os << "embedding_dim = " << cfg.embedding_dim << "\n";
    return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("model config: malformed line '" + line + "'");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "family") {
            cfg.family = value;
        } else if (key == "depth") {
            cfg.depth.clear();
            std::istringstream ds(value);
            std::string tok;
            while (std::getline(ds, tok, ',')) {
                cfg.depth.push_back(std::stoi(tok));
            }
        } else if (key == "channel_scale") {
            cfg.channel_scale = std::stod(value);
        } else if (key == "conv_mode") {
            cfg.conv_mode = conv_mode_from_string(value);
        } else if (key == "k") {
            cfg.k = std::stoi(value);
        } else if (key == "embedding_dim") {
            cfg.embedding_dim = std::stoll(value);
        } else {
            throw ParseError("model config: unknown key '" + key + "'");
        }
    }
    return cfg;
}

namespace {

void validate_config(const ModelConfig& cfg) {
    if (cfg.family != "resnet" && cfg.family != "vgg") {
        throw ParameterError("model: unknown family '" + cfg.family + "' (want resnet|vgg)");
    }
    if (!(cfg.channel_scale > 0.0)) {
        throw ParameterError("model: channel_scale must be > 0");
    }
    if (cfg.conv_mode != ConvMode::Static && cfg.k < 1) {
        throw ParameterError("model: K must be >= 1 for dynamic conv modes");
    }
    if (cfg.embedding_dim < 1) {
        throw ParameterError("model: embedding_dim must be >= 1");
    }
    if (cfg.family == "resnet" &&
        (cfg.depth.size() != 4 ||
         std::any_of(cfg.depth.begin(), cfg.depth.end(), [](int d) { return d < 1; }))) {
        throw ParameterError("model: resnet depth must list 4 positive block counts");
    }
}

std::vector<std::int64_t> stage_widths(double scale) {
    std::vector<std::int64_t> widths;
    for (int s = 0; s < 4; ++s) {
        const double w = 16.0 * scale * static_cast<double>(1 << s);
        widths.push_back(std::max<std::int64_t>(1, std::llround(w)));
    }
    return widths;
}

void init_uniform(const TensorPtr& t, double bound, Rng& rng) {
    for (double& v : t->data) {
        v = rng.uniform(-bound, bound);
    }
}

} // namespace

ConvUnit Model::make_unit(const std::string& name, std::int64_t c_in, std::int64_t f_in,
                          std::int64_t c_out, std::int64_t kh, std::int64_t kw, Conv2dSpec spec,
                          bool dynamic, Rng& rng) {
    ConvUnit u;
    u.name = name;
    u.spec = spec;
    u.time_pad = TimePad::Wrap;
    if (dynamic) {
        u.dyn = std::make_shared<TDYConvLayer>(c_in, f_in, c_out, kh, kw, cfg_.k, spec, rng, 31.0,
                                               TimePad::Wrap);
        u.dyn->layer_id = static_cast<int>(dyn_layers_.size());
        u.dyn_index = u.dyn->layer_id;
    } else {
        u.weight = Tensor::zeros({c_out, c_in, kh, kw}, true);
        init_uniform(u.weight, std::sqrt(6.0 / static_cast<double>(c_in * kh * kw)), rng);
        u.bias = Tensor::zeros({c_out}, true);
    }
    u.bn = std::make_unique<BatchNorm>(c_out);
    return u;
}

TensorPtr Model::unit_forward(ConvUnit& u, const TensorPtr& x, BatchNormMode mode,
                              std::vector<std::vector<AttentionMap>>* maps) {
    TensorPtr h;
    if (u.dyn) {
        const AttentionScope scope =
            cfg_.conv_mode == ConvMode::Dy ? AttentionScope::Utterance : AttentionScope::Frame;
        auto [out, attn] = u.dyn->forward_batched(x, scope);
        if (maps != nullptr) {
            (*maps)[static_cast<std::size_t>(u.dyn_index)] =
                split_attention(attn, u.dyn->layer_id, u.dyn->temperature());
        }
        h = out;
    } else {
        TensorPtr conv_in = x;
        Conv2dSpec spec = u.spec;
        if (u.time_pad == TimePad::Wrap && spec.pad_t > 0) {
            conv_in = wrap_pad_time(x, spec.pad_t);
            spec.pad_t = 0;
        }
        h = relu(conv2d(conv_in, u.weight, u.bias, spec));
    }
    return batch_norm(h, *u.bn, mode);
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    validate_config(cfg_);
    Rng rng(seed);
    const auto widths = stage_widths(cfg_.channel_scale);
    const bool dynamic = cfg_.conv_mode != ConvMode::Static;
    std::int64_t f = kMelBins;
    std::int64_t stride_cum = 1;

    // Stem: static 3x3 stride-1 conv extracting global features.
    stem_ = make_unit("stem", 1, f, widths[0], 3, 3, {1, 1, 1, 1}, false, rng);
    stem_.stride_cum_t = stride_cum;

    std::int64_t c = widths[0];
    if (cfg_.family == "resnet") {
        stages_.resize(4);
        for (int s = 0; s < 4; ++s) {
            const std::int64_t out_c = widths[static_cast<std::size_t>(s)];
            for (int b = 0; b < cfg_.depth[static_cast<std::size_t>(s)]; ++b) {
                const bool downsample = s > 0 && b == 0;
                const std::int64_t stride = downsample ? 2 : 1;
                const std::string base =
                    "s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1);
                Block block;
                block.conv1 = make_unit(base + ".conv1", c, f, out_c, 3, 3,
                                        {stride, stride, 1, 1}, dynamic, rng);
                const std::int64_t f_mid = conv_out_extent(f, 3, stride, 1);
                stride_cum *= stride;
                block.conv1.stride_cum_t = stride_cum;
                if (block.conv1.dyn) {
                    dyn_layers_.push_back(DynLayerInfo{block.conv1.dyn_index, block.conv1.name,
                                                       stride_cum, block.conv1.dyn.get()});
                }
                block.conv2 = make_unit(base + ".conv2", out_c, f_mid, out_c, 3, 3, {1, 1, 1, 1},
                                        dynamic, rng);
                block.conv2.stride_cum_t = stride_cum;
                if (block.conv2.dyn) {
                    dyn_layers_.push_back(DynLayerInfo{block.conv2.dyn_index, block.conv2.name,
                                                       stride_cum, block.conv2.dyn.get()});
                }
                if (downsample || c != out_c) {
                    block.shortcut = std::make_unique<ConvUnit>(
                        make_unit(base + ".short", c, f, out_c, 1, 1, {stride, stride, 0, 0},
                                  false, rng));
                    block.shortcut->stride_cum_t = stride_cum;
                }
                stages_[static_cast<std::size_t>(s)].push_back(std::move(block));
                c = out_c;
                f = f_mid;
            }
        }
    } else {
        for (int s = 1; s < 4; ++s) {
            const std::int64_t out_c = widths[static_cast<std::size_t>(s)];
            ConvUnit unit = make_unit("v" + std::to_string(s + 1), c, f, out_c, 3, 3,
                                      {2, 2, 1, 1}, dynamic, rng);
            f = conv_out_extent(f, 3, 2, 1);
            stride_cum *= 2;
            unit.stride_cum_t = stride_cum;
            if (unit.dyn) {
                dyn_layers_.push_back(
                    DynLayerInfo{unit.dyn_index, unit.name, stride_cum, unit.dyn.get()});
            }
            vgg_units_.push_back(std::move(unit));
            c = out_c;
        }
    }
    final_stride_t_ = stride_cum;
    final_channels_ = c;

    proj_w_ = Tensor::zeros({cfg_.embedding_dim, c}, true);
    init_uniform(proj_w_, std::sqrt(6.0 / static_cast<double>(c)), rng);
    proj_b_ = Tensor::zeros({cfg_.embedding_dim}, true);
}

TensorPtr Model::backbone(const TensorPtr& x, BatchNormMode mode,
                          std::vector<std::vector<AttentionMap>>* maps) {
    if (x->rank() != 4 || x->shape[1] != 1 || x->shape[2] != kMelBins) {
        throw DimensionError("model: expected input [N,1,64,T], got " + x->shape_str());
    }
    if (x->shape[3] < 1) {
        throw DataError("model: input has no time frames");
    }
    if (maps != nullptr) {
        maps->assign(dyn_layers_.size(), {});
    }
    TensorPtr h = unit_forward(stem_, x, mode, maps);
    if (cfg_.family == "resnet") {
        for (auto& stage : stages_) {
            for (auto& block : stage) {
                TensorPtr identity = h;
                if (block.shortcut) {
                    identity = unit_forward(*block.shortcut, h, mode, maps);
                }
                TensorPtr out = unit_forward(block.conv1, h, mode, maps);
                out = unit_forward(block.conv2, out, mode, maps);
                h = add(out, identity);
            }
        }
    } else {
        for (auto& unit : vgg_units_) {
            h = unit_forward(unit, h, mode, maps);
        }
    }
    return h;
}

TensorPtr Model::forward_embeddings(const TensorPtr& x, BatchNormMode mode,
                                    std::vector<std::vector<AttentionMap>>* maps) {
    auto feat = backbone(x, mode, maps);           // [N,C,F',T']
    auto frames = freq_mean(feat);                 // [N,C,T']
    auto pooled = time_mean(frames);               // [N,C]
    return affine(pooled, proj_w_, proj_b_);       // [N,D]
}

TensorPtr Model::forward_frames(const TensorPtr& x, BatchNormMode mode,
                                std::vector<AttentionMap>* maps) {
    if (x->shape[0] != 1) {
        throw DimensionError("forward_frames: expected a single utterance, got " + x->shape_str());
    }
    std::vector<std::vector<AttentionMap>> all_maps;
    auto feat = backbone(x, mode, maps != nullptr ? &all_maps : nullptr);
    if (maps != nullptr) {
        maps->clear();
        for (auto& per_layer : all_maps) {
            maps->push_back(std::move(per_layer.front()));
        }
    }
    auto frames = frames_from_ct(freq_mean(feat)); // [T',C]
    return affine(frames, proj_w_, proj_b_);       // [T',D]
}

namespace {

void collect_unit(const ConvUnit& u, std::vector<std::pair<std::string, TensorPtr>>& out) {
    if (u.dyn) {
        for (int k = 0; k < u.dyn->num_kernels(); ++k) {
            out.emplace_back(u.name + ".basis" + std::to_string(k) + ".weight",
                             u.dyn->basis_kernels[static_cast<std::size_t>(k)]);
            out.emplace_back(u.name + ".basis" + std::to_string(k) + ".bias",
                             u.dyn->basis_biases[static_cast<std::size_t>(k)]);
        }
        out.emplace_back(u.name + ".attn.w1", u.dyn->attn_w1);
        out.emplace_back(u.name + ".attn.b1", u.dyn->attn_b1);
        out.emplace_back(u.name + ".attn.w2", u.dyn->attn_w2);
        out.emplace_back(u.name + ".attn.b2", u.dyn->attn_b2);
    } else {
        out.emplace_back(u.name + ".conv.weight", u.weight);
        out.emplace_back(u.name + ".conv.bias", u.bias);
    }
    out.emplace_back(u.name + ".bn.gamma", u.bn->gamma);
    out.emplace_back(u.name + ".bn.beta", u.bn->beta);
}

} // namespace

std::vector<std::pair<std::string, TensorPtr>> Model::named_parameters() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    collect_unit(stem_, out);
    for (const auto& stage : stages_) {
        for (const auto& block : stage) {
            collect_unit(block.conv1, out);
            collect_unit(block.conv2, out);
            if (block.shortcut) {
                collect_unit(*block.shortcut, out);
            }
        }
    }
    for (const auto& unit : vgg_units_) {
        collect_unit(unit, out);
    }
    out.emplace_back("proj.weight", proj_w_);
    out.emplace_back("proj.bias", proj_b_);
    return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::named_state() const {
    std::vector<std::pair<std::string, std::vector<double>*>> out;
    for (const auto& [name, tensor] : named_parameters()) {
        out.emplace_back(name, &tensor->data);
    }
    auto add_bn = [&out](const ConvUnit& u) {
        out.emplace_back(u.name + ".bn.running_mean", &u.bn->running_mean);
        out.emplace_back(u.name + ".bn.running_var", &u.bn->running_var);
    };
    add_bn(stem_);
    for (const auto& stage : stages_) {
        for (const auto& block : stage) {
            add_bn(block.conv1);
            add_bn(block.conv2);
            if (block.shortcut) add_bn(*block.shortcut);
        }
    }
    for (const auto& unit : vgg_units_) {
        add_bn(unit);
    }
    return out;
}

void Model::set_temperature(double tau) {
    for (auto& info : dyn_layers_) {
        info.layer->set_temperature(tau);
    }
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    return Model(cfg, seed);
}

SpeakerEmbedding embed_utterance(Model& model, const MelSpectrogram& mel) {
    auto x = reshape(mel.values, {1, 1, kMelBins, mel.values->shape[1]});
    auto emb = model.forward_embeddings(x, BatchNormMode::Eval);
    SpeakerEmbedding out;
    out.vector = reshape(emb, {model.embedding_dim()});
    assert_finite(*out.vector, "speaker embedding");
    return out;
}

TensorPtr embed_frames(Model& model, const MelSpectrogram& mel,
                       std::vector<AttentionMap>* maps) {
    auto x = reshape(mel.values, {1, 1, kMelBins, mel.values->shape[1]});
    auto frames = model.forward_frames(x, BatchNormMode::Eval, maps); // [T,D]
    const std::int64_t t = frames->shape[0], d = frames->shape[1];
    auto out = Tensor::zeros({d, t});
    for (std::int64_t i = 0; i < t; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            out->data[static_cast<std::size_t>(j * t + i)] =
                frames->data[static_cast<std::size_t>(i * d + j)];
        }
    }
    return out;
}

std::int64_t count_parameters(const Model& model) {
    std::int64_t n = 0;
    for (const auto& [name, tensor] : model.named_parameters()) {
        (void)name;
        n += tensor->size();
    }
    return n;
}

std::int64_t count_parameters(const ModelConfig& cfg) {
    Model m(cfg, 0);
    return count_parameters(m);
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'D', 'Y', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<char>(v >> (8 * i));
    }
    out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("save_checkpoint: cannot open " + path + " for writing");
    }
    out.write(kMagic, 4);
    const std::string cfg_text = canonical_config_text(model.config());
    put_u64(out, cfg_text.size());
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    auto entries = model.named_state();
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    put_u64(out, entries.size());
    for (const auto& [name, values] : entries) {
        put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(out, values->size());
        out.write(reinterpret_cast<const char*>(values->data()),
                  static_cast<std::streamsize>(values->size() * sizeof(double)));
    }
    if (!out) {
        throw IoError("save_checkpoint: write failed for " + path);
    }
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_checkpoint: cannot open " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("load_checkpoint: " + path + ": bad magic (want TDY1)");
    }
    const std::uint64_t cfg_len = get_u64(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    Model model(model_config_from_text(cfg_text), 0);

    auto entries = model.named_state();
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::uint64_t n = get_u64(in);
    if (n != entries.size()) {
        throw DataError("load_checkpoint: " + path + ": entry count " + std::to_string(n) +
                        " does not match model (" + std::to_string(entries.size()) + ")");
    }
    for (auto& [name, values] : entries) {
        const std::uint64_t name_len = get_u64(in);
        std::string got(name_len, '\0');
        in.read(got.data(), static_cast<std::streamsize>(name_len));
        if (got != name) {
            throw DataError("load_checkpoint: " + path + ": unexpected entry '" + got +
                            "' (want '" + name + "')");
        }
        const std::uint64_t count = get_u64(in);
        if (count != values->size()) {
            throw DataError("load_checkpoint: " + path + ": entry '" + name + "' has " +
                            std::to_string(count) + " values, model expects " +
                            std::to_string(values->size()));
        }
        in.read(reinterpret_cast<char*>(values->data()),
                static_cast<std::streamsize>(count * sizeof(double)));
    }
    if (!in) {
        throw DataError("load_checkpoint: " + path + ": truncated file");
    }
    return model;
}

} // namespace tdy
