#include "tdy/dynconv.hpp"

#include <algorithm>
#include <cmath>

namespace tdy {

std::int64_t TDYConvLayer::hidden_extent(std::int64_t c_in, std::int64_t f_in) {
    return std::max<std::int64_t>(1, c_in * f_in / 8);
}

TDYConvLayer::TDYConvLayer(std::int64_t c_in, std::int64_t f_in, std::int64_t c_out,
                           std::int64_t kh, std::int64_t kw, int k, Conv2dSpec conv, Rng& rng,
                           double temperature, TimePad time_pad)
    : c_in_(c_in), f_in_(f_in), c_out_(c_out), kh_(kh), kw_(kw), k_(k), conv_(conv),
      temperature_(temperature), time_pad_(time_pad) {
    if (k < 1) {
        throw ParameterError("TDYConvLayer: K must be >= 1, got " + std::to_string(k));
    }
    if (!(temperature >= 1.0 && temperature <= 31.0)) {
        throw ParameterError("TDYConvLayer: temperature must lie in [1,31], got " +
                             std::to_string(temperature));
    }
    const double kernel_bound = std::sqrt(6.0 / static_cast<double>(c_in * kh * kw));
    for (int i = 0; i < k; ++i) {
        auto w = Tensor::zeros({c_out, c_in, kh, kw}, true);
        for (double& v : w->data) {
            v = rng.uniform(-kernel_bound, kernel_bound);
        }
        basis_kernels.push_back(std::move(w));
        basis_biases.push_back(Tensor::zeros({c_out}, true));
    }
    const std::int64_t hidden = hidden_extent(c_in, f_in);
    const double w1_bound = std::sqrt(6.0 / static_cast<double>(c_in * f_in));
    attn_w1 = Tensor::zeros({hidden, c_in * f_in}, true);
    for (double& v : attn_w1->data) {
        v = rng.uniform(-w1_bound, w1_bound);
    }
    attn_b1 = Tensor::zeros({hidden}, true);
    const double w2_bound = std::sqrt(6.0 / static_cast<double>(hidden));
    attn_w2 = Tensor::zeros({k, hidden}, true);
    for (double& v : attn_w2->data) {
        v = rng.uniform(-w2_bound, w2_bound);
    }
    attn_b2 = Tensor::zeros({k}, true);
}

void TDYConvLayer::set_temperature(double tau) {
    if (!(tau >= 1.0 && tau <= 31.0)) {
        throw ParameterError("TDYConvLayer: temperature must lie in [1,31], got " +
                             std::to_string(tau));
    }
    temperature_ = tau;
}

std::int64_t TDYConvLayer::out_time_extent(std::int64_t t_in) const {
    if (time_pad_ == TimePad::Wrap) {
        return conv_out_extent(t_in + 2 * conv_.pad_t, kw_, conv_.stride_t, 0);
    }
    return conv_out_extent(t_in, kw_, conv_.stride_t, conv_.pad_t);
}

std::int64_t TDYConvLayer::out_freq_extent() const {
    return conv_out_extent(f_in_, kh_, conv_.stride_f, conv_.pad_f);
}

std::vector<std::int64_t> TDYConvLayer::attention_column_indices(std::int64_t t_in) const {
    const std::int64_t t_out = out_time_extent(t_in);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(t_out));
    for (std::int64_t t = 0; t < t_out; ++t) {
        const std::int64_t center = t * conv_.stride_t + kw_ / 2 - conv_.pad_t;
        idx[static_cast<std::size_t>(t)] =
            time_pad_ == TimePad::Wrap ? ((center % t_in) + t_in) % t_in
                                       : std::clamp<std::int64_t>(center, 0, t_in - 1);
    }
    return idx;
}

std::pair<TensorPtr, TensorPtr> TDYConvLayer::forward_batched(const TensorPtr& x,
                                                              AttentionScope scope) const {
    if (x->rank() != 4) {
        throw DimensionError("TDYConvLayer: expected [N,C,F,T], got " + x->shape_str());
    }
    if (x->shape[1] != c_in_ || x->shape[2] != f_in_) {
        throw DimensionError("TDYConvLayer: input " + x->shape_str() + " does not match layer (C_in=" +
                             std::to_string(c_in_) + ", F_in=" + std::to_string(f_in_) + ")");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t t_in = x->shape[3];
    const std::int64_t t_out = out_time_extent(t_in);

    TensorPtr attn;
    if (scope == AttentionScope::Frame) {
        auto cols = gather_time_columns(x, attention_column_indices(t_in)); // [N,T',CF]
        auto hidden = relu(affine(cols, attn_w1, attn_b1));
        auto logits = affine(hidden, attn_w2, attn_b2); // [N,T',K]
        attn = softmax_tempered(logits, temperature_);
    } else {
        auto col_mean = reshape(mean_axis(x, 3), {n, c_in_ * f_in_}); // [N,CF]
        auto hidden = relu(affine(col_mean, attn_w1, attn_b1));
        auto logits = affine(hidden, attn_w2, attn_b2); // [N,K]
        auto soft = softmax_tempered(logits, temperature_);
        attn = broadcast_rows(reshape(soft, {n, 1, static_cast<std::int64_t>(k_)}), t_out);
    }

    TensorPtr conv_in = x;
    Conv2dSpec spec = conv_;
    if (time_pad_ == TimePad::Wrap) {
        conv_in = wrap_pad_time(x, conv_.pad_t);
        spec.pad_t = 0;
    }
    std::vector<TensorPtr> branches;
    branches.reserve(static_cast<std::size_t>(k_));
    for (int i = 0; i < k_; ++i) {
        branches.push_back(conv2d(conv_in, basis_kernels[static_cast<std::size_t>(i)],
                                  basis_biases[static_cast<std::size_t>(i)], spec));
    }
    auto out = relu(mix_time(branches, attn));
    return {out, attn};
}

std::vector<TensorPtr> TDYConvLayer::parameters() const {
    std::vector<TensorPtr> params;
    for (const auto& w : basis_kernels) params.push_back(w);
    for (const auto& b : basis_biases) params.push_back(b);
    params.push_back(attn_w1);
    params.push_back(attn_b1);
    params.push_back(attn_w2);
    params.push_back(attn_b2);
    return params;
}

namespace {

TensorPtr as_batched(const TensorPtr& x) {
    if (x->rank() != 3) {
        throw DimensionError("expected single utterance [C,F,T], got " + x->shape_str());
    }
    return reshape(x, {1, x->shape[0], x->shape[1], x->shape[2]});
}

AttentionMap single_map(const TensorPtr& attn, const TDYConvLayer& layer) {
    auto maps = split_attention(attn, layer.layer_id, layer.temperature());
    return maps.front();
}

} // namespace

std::vector<AttentionMap> split_attention(const TensorPtr& attn, int layer_id,
                                          double temperature) {
    if (attn->rank() != 3) {
        throw DimensionError("split_attention: expected [N,T',K], got " + attn->shape_str());
    }
    const std::int64_t n = attn->shape[0], t = attn->shape[1], k = attn->shape[2];
    std::vector<AttentionMap> maps;
    maps.reserve(static_cast<std::size_t>(n));
    for (std::int64_t b = 0; b < n; ++b) {
        auto w = Tensor::zeros({k, t});
        for (std::int64_t ti = 0; ti < t; ++ti) {
            for (std::int64_t ki = 0; ki < k; ++ki) {
                w->data[static_cast<std::size_t>(ki * t + ti)] =
                    attn->data[static_cast<std::size_t>((b * t + ti) * k + ki)];
            }
        }
        maps.push_back(AttentionMap{std::move(w), layer_id, temperature});
    }
    return maps;
}

AttentionMap attention_weights(const TensorPtr& x, const TDYConvLayer& layer) {
    auto [out, attn] = layer.forward_batched(as_batched(x), AttentionScope::Frame);
    (void)out;
    return single_map(attn, layer);
}

std::pair<TensorPtr, AttentionMap> tdy_conv_forward(const TensorPtr& x,
                                                    const TDYConvLayer& layer) {
    auto batched = as_batched(x);
    auto [out, attn] = layer.forward_batched(batched, AttentionScope::Frame);
    auto squeezed = reshape(out, {out->shape[1], out->shape[2], out->shape[3]});
    return {squeezed, single_map(attn, layer)};
}

std::pair<TensorPtr, AttentionMap> dy_conv_forward(const TensorPtr& x,
                                                   const TDYConvLayer& layer) {
    auto batched = as_batched(x);
    auto [out, attn] = layer.forward_batched(batched, AttentionScope::Utterance);
    auto squeezed = reshape(out, {out->shape[1], out->shape[2], out->shape[3]});
    return {squeezed, single_map(attn, layer)};
}

TensorPtr adaptive_kernel_oracle(const TensorPtr& x, const TDYConvLayer& layer,
                                 const AttentionMap& attn) {
    if (x->rank() != 3) {
        throw DimensionError("adaptive_kernel_oracle: expected [C,F,T], got " + x->shape_str());
    }
    const std::int64_t c = x->shape[0], f = x->shape[1], t = x->shape[2];
    const auto& spec = layer.conv_spec();
    const std::int64_t t_out = layer.out_time_extent(t);
    const std::int64_t f_out = layer.out_freq_extent();
    const std::int64_t k = layer.num_kernels();
    if (attn.weights->shape != std::vector<std::int64_t>{k, t_out}) {
        throw DimensionError("adaptive_kernel_oracle: attention shape " +
                             attn.weights->shape_str() + " does not match layer output");
    }
    const auto& kshape = layer.basis_kernels[0]->shape;
    const std::int64_t kw = kshape[3];
    auto out = Tensor::zeros({layer.c_out(), f_out, t_out});

    for (std::int64_t to = 0; to < t_out; ++to) {
        // W(t') = sum_k pi_k(t') W_k and b(t') = sum_k pi_k(t') b_k.
        auto w_eff = Tensor::zeros(kshape);
        auto b_eff = Tensor::zeros({layer.c_out()});
        for (std::int64_t ki = 0; ki < k; ++ki) {
            const double pi = attn.weights->data[static_cast<std::size_t>(ki * t_out + to)];
            const auto& wk = layer.basis_kernels[static_cast<std::size_t>(ki)];
            for (std::size_t i = 0; i < w_eff->data.size(); ++i) {
                w_eff->data[i] += pi * wk->data[i];
            }
            const auto& bk = layer.basis_biases[static_cast<std::size_t>(ki)];
            for (std::size_t i = 0; i < b_eff->data.size(); ++i) {
                b_eff->data[i] += pi * bk->data[i];
            }
        }
        // Time window of the input feeding this output bin; padding columns
        // are zero or wrapped depending on the layer's time-pad mode.
        auto window = Tensor::zeros({c, f, kw});
        for (std::int64_t j = 0; j < kw; ++j) {
            std::int64_t ti = to * spec.stride_t + j - spec.pad_t;
            if (layer.time_pad() == TimePad::Wrap) {
                ti = ((ti % t) + t) % t;
            } else if (ti < 0 || ti >= t) {
                continue;
            }
            for (std::int64_t ci = 0; ci < c; ++ci) {
                for (std::int64_t fi = 0; fi < f; ++fi) {
                    window->data[static_cast<std::size_t>((ci * f + fi) * kw + j)] =
                        x->data[static_cast<std::size_t>((ci * f + fi) * t + ti)];
                }
            }
        }
        auto column = conv2d(window, w_eff, b_eff,
                             Conv2dSpec{spec.stride_f, spec.stride_t, spec.pad_f, 0});
        for (std::int64_t co = 0; co < layer.c_out(); ++co) {
            for (std::int64_t fo = 0; fo < f_out; ++fo) {
                const double v = column->data[static_cast<std::size_t>(co * f_out + fo)];
                out->data[static_cast<std::size_t>((co * f_out + fo) * t_out + to)] =
                    v > 0.0 ? v : 0.0;
            }
        }
    }
    return out;
}

} // namespace tdy
