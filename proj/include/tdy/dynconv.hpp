#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tdy/tensor.hpp"

namespace tdy {

/// Per-layer attention over basis kernels for one utterance. Columns are
/// per-time-bin distributions and sum to 1.
struct AttentionMap {
    TensorPtr weights; // [K, T'], plain values (no gradient tracking)
    int layer_id = -1;
    double temperature = 1.0;
};

/// Frame scope adapts the kernel per time bin; Utterance scope derives one
/// shared kernel mixture from the time-averaged input.
enum class AttentionScope { Frame, Utterance };

/// Zero pads the time axis with zeros; Wrap pads circularly, which makes the
/// layer exactly invariant to whole-input tiling (matching the frontend's
/// wrap-padding of short utterances).
enum class TimePad { Zero, Wrap };

/// Dynamic convolution layer: K trained basis kernels mixed per time bin by
/// a softmax-constrained attention MLP over the flattened (channel,
/// frequency) input column.
class TDYConvLayer {
public:
    TDYConvLayer(std::int64_t c_in, std::int64_t f_in, std::int64_t c_out, std::int64_t kh,
                 std::int64_t kw, int k, Conv2dSpec conv, Rng& rng, double temperature = 31.0,
                 TimePad time_pad = TimePad::Zero);

    static std::int64_t hidden_extent(std::int64_t c_in, std::int64_t f_in);

    void set_temperature(double tau);
    double temperature() const { return temperature_; }
    int num_kernels() const { return k_; }
    std::int64_t c_in() const { return c_in_; }
    std::int64_t f_in() const { return f_in_; }
    std::int64_t c_out() const { return c_out_; }
    const Conv2dSpec& conv_spec() const { return conv_; }
    TimePad time_pad() const { return time_pad_; }
    std::int64_t out_time_extent(std::int64_t t_in) const;
    std::int64_t out_freq_extent() const;

    /// Input time column feeding the attention MLP for output bin t':
    /// t' * stride_t + floor(kw/2) - pad_t, clamped to [0, T) (zero padding)
    /// or wrapped modulo T (circular padding).
    std::vector<std::int64_t> attention_column_indices(std::int64_t t_in) const;

    /// Differentiable batched forward. x is [N,C,F,T].
    /// Returns the activation [N,C_out,F',T'] and the attention tensor
    /// [N,T',K] (both on the tape when recording).
    std::pair<TensorPtr, TensorPtr> forward_batched(const TensorPtr& x,
                                                    AttentionScope scope) const;

    std::vector<TensorPtr> parameters() const;

    int layer_id = -1;

    // Eq. (1)-(2) state: W_k, b_k and the two attention FC layers.
    std::vector<TensorPtr> basis_kernels; // K x [C_out,C_in,kh,kw]
    std::vector<TensorPtr> basis_biases;  // K x [C_out]
    TensorPtr attn_w1, attn_b1;           // [H, C_in*F_in], [H]
    TensorPtr attn_w2, attn_b2;           // [K, H], [K]

private:
    std::int64_t c_in_, f_in_, c_out_, kh_, kw_;
    int k_;
    Conv2dSpec conv_;
    double temperature_;
    TimePad time_pad_;
};

/// Attention weights for a single utterance x[C_in,F,T].
AttentionMap attention_weights(const TensorPtr& x, const TDYConvLayer& layer);

/// Frame-level dynamic convolution of a single utterance.
std::pair<TensorPtr, AttentionMap> tdy_conv_forward(const TensorPtr& x,
                                                    const TDYConvLayer& layer);

/// Utterance-level variant: one attention vector broadcast over time.
std::pair<TensorPtr, AttentionMap> dy_conv_forward(const TensorPtr& x,
                                                   const TDYConvLayer& layer);

/// Definitionally adaptive computation: for every output time bin,
/// materialize the mixed kernel and bias, convolve just that time position,
/// apply relu. Slow by construction; the equivalence oracle for
/// tdy_conv_forward.
TensorPtr adaptive_kernel_oracle(const TensorPtr& x, const TDYConvLayer& layer,
                                 const AttentionMap& attn);

/// Extracts per-sample [K,T'] attention maps from the batched [N,T',K]
/// attention tensor.
std::vector<AttentionMap> split_attention(const TensorPtr& attn, int layer_id,
                                          double temperature);

} // namespace tdy
