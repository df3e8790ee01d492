#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tdy/model.hpp"
#include "test_util.hpp"

using namespace tdy;
using testutil::random_tensor;

namespace {

MelSpectrogram random_mel(std::int64_t frames, std::uint64_t seed) {
    Rng rng(seed);
    MelSpectrogram mel;
    mel.values = random_tensor({kMelBins, frames}, rng, -1.5, 1.5);
    return mel;
}

ModelConfig toy(ConvMode mode, double scale = 0.25, int k = 6) {
    ModelConfig cfg;
    cfg.conv_mode = mode;
    cfg.channel_scale = scale;
    cfg.k = k;
    return cfg;
}

} // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("topology is invariant under conv_mode") {
    auto mel = random_mel(32, 1);
    for (const char* family : {"resnet", "vgg"}) {
        ModelConfig base = toy(ConvMode::Static);
        base.family = family;
        Model stat(base, 7);
        base.conv_mode = ConvMode::Tdy;
        Model tdy_m(base, 7);
        base.conv_mode = ConvMode::Dy;
        Model dy_m(base, 7);

        auto fs = embed_frames(stat, mel);
        auto ft = embed_frames(tdy_m, mel);
        auto fd = embed_frames(dy_m, mel);
        CHECK(fs->shape == ft->shape);
        CHECK(fs->shape == fd->shape);
        CHECK(stat.final_time_stride() == tdy_m.final_time_stride());
    }
}

TEST_CASE("same seed builds bit-identical parameters") {
    Model a(toy(ConvMode::Tdy), 99);
    Model b(toy(ConvMode::Tdy), 99);
    auto pa = a.named_parameters();
    auto pb = b.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second->data == pb[i].second->data);
    }

    auto mel = random_mel(24, 2);
    auto ea = embed_utterance(a, mel);
    auto eb = embed_utterance(b, mel);
    CHECK(ea.vector->data == eb.vector->data);
}

TEST_CASE("stem is exempt from dynamic replacement") {
    Model m(toy(ConvMode::Tdy), 5);
    // resnet-toy with one block per stage: 8 non-stem block convs.
    CHECK(m.dynamic_layers().size() == 8);
    for (const auto& info : m.dynamic_layers()) {
        CHECK(info.name.find("stem") == std::string::npos);
    }

    auto mel = random_mel(32, 3);
    std::vector<AttentionMap> maps;
    (void)embed_frames(m, mel, &maps);
    CHECK(maps.size() == 8);
    for (const auto& map : maps) {
        CHECK(map.weights->shape[0] == 6);
    }

    Model s(toy(ConvMode::Static), 5);
    CHECK(s.dynamic_layers().empty());
    std::vector<AttentionMap> smaps;
    (void)embed_frames(s, mel, &smaps);
    CHECK(smaps.empty());

    ModelConfig bad = toy(ConvMode::Tdy);
    bad.family = "densenet";
    CHECK_THROWS_AS((void)Model(bad, 1), ParameterError);
}

TEST_CASE("utterance embedding is the time mean of frame embeddings") {
    Model m(toy(ConvMode::Tdy), 11);
    auto mel = random_mel(40, 4);
    auto emb = embed_utterance(m, mel);
    auto frames = embed_frames(m, mel); // [D, T_f]
    const std::int64_t d = frames->shape[0], t = frames->shape[1];
    REQUIRE(emb.vector->size() == d);
    for (std::int64_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::int64_t i = 0; i < t; ++i) {
            mean += frames->data[static_cast<std::size_t>(j * t + i)];
        }
        mean /= static_cast<double>(t);
        CHECK(std::fabs(mean - emb.vector->data[static_cast<std::size_t>(j)]) < 1e-10);
    }
}

TEST_CASE("tiled input gives the same embedding") {
    for (auto mode : {ConvMode::Static, ConvMode::Tdy}) {
        Model m(toy(mode), 13);
        auto mel = random_mel(32, 6);
        MelSpectrogram tiled;
        tiled.values = Tensor::zeros({kMelBins, 64});
        for (std::int64_t f = 0; f < kMelBins; ++f) {
            for (std::int64_t t = 0; t < 64; ++t) {
                tiled.values->data[static_cast<std::size_t>(f * 64 + t)] =
                    mel.values->data[static_cast<std::size_t>(f * 32 + t % 32)];
            }
        }
        auto e1 = embed_utterance(m, mel);
        auto e2 = embed_utterance(m, tiled);
        for (std::int64_t i = 0; i < e1.vector->size(); ++i) {
            CHECK(std::fabs(e1.vector->data[static_cast<std::size_t>(i)] -
                            e2.vector->data[static_cast<std::size_t>(i)]) < 1e-9);
        }
    }
}

TEST_CASE("parameter counts") {
    SUBCASE("single static conv formula") {
        Rng rng(1);
        auto w = Tensor::zeros({32, 16, 3, 3}, true);
        auto b = Tensor::zeros({32}, true);
        CHECK(w->size() + b->size() == 4640);
    }
    SUBCASE("single TDY layer formula") {
        Rng rng(1);
        TDYConvLayer layer(16, 8, 32, 3, 3, 6, {1, 1, 1, 1}, rng);
        std::int64_t n = 0;
        for (const auto& p : layer.parameters()) {
            n += p->size();
        }
        CHECK(n == 30006);
    }
    SUBCASE("matched static/tdy ratio brackets the full-scale ratio") {
        const auto n_static = count_parameters(toy(ConvMode::Static));
        const auto n_tdy = count_parameters(toy(ConvMode::Tdy));
        const double ratio = static_cast<double>(n_tdy) / static_cast<double>(n_static);
        INFO("static ", n_static, " tdy ", n_tdy, " ratio ", ratio);
        CHECK(ratio >= 6.0);
        CHECK(ratio <= 8.0);
    }
    SUBCASE("conv parameters scale quadratically with channel scale") {
        auto conv_subtotal = [](double scale) {
            Model m(toy(ConvMode::Static, scale), 0);
            std::int64_t n = 0;
            for (const auto& [name, t] : m.named_parameters()) {
                if (name.find(".conv.") != std::string::npos) {
                    n += t->size();
                }
            }
            return static_cast<double>(n);
        };
        const double ratio = conv_subtotal(0.5) / conv_subtotal(0.25);
        CHECK(ratio >= 3.5);
        CHECK(ratio <= 4.5);
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    Model m(toy(ConvMode::Tdy), 21);
    // Perturb running stats so they are not the defaults.
    auto state = m.named_state();
    Rng rng(2);
    for (auto& [name, values] : state) {
        (void)name;
        for (double& v : *values) {
            v += 0.01 * rng.uniform(-1.0, 1.0);
        }
    }
    const auto path =
        (std::filesystem::temp_directory_path() / "tdy_model_ckpt.bin").string();
    save_checkpoint(path, m);
    Model r = load_checkpoint(path);
    CHECK(r.config().conv_mode == ConvMode::Tdy);
    CHECK(r.config().k == 6);
    auto sa = m.named_state();
    auto sb = r.named_state();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].first == sb[i].first);
        CHECK(*sa[i].second == *sb[i].second);
    }
    auto mel = random_mel(24, 9);
    auto ea = embed_utterance(m, mel);
    auto eb = embed_utterance(r, mel);
    CHECK(ea.vector->data == eb.vector->data);
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)load_checkpoint(path), IoError);
}

TEST_CASE("vgg family builds and embeds") {
    ModelConfig cfg = toy(ConvMode::Tdy);
    cfg.family = "vgg";
    Model m(cfg, 31);
    CHECK(m.dynamic_layers().size() == 3);
    auto mel = random_mel(32, 10);
    auto emb = embed_utterance(m, mel);
    CHECK(emb.vector->size() == 128);
    CHECK(emb.vector->all_finite());
}

TEST_SUITE_END();
