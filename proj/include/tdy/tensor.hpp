#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdy {

// Error taxonomy. ContractError maps to exit code 1, IoError to exit code 2.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimensionError : ContractError {
    explicit DimensionError(const std::string& msg) : ContractError(msg) {}
};
struct ParameterError : ContractError {
    explicit ParameterError(const std::string& msg) : ContractError(msg) {}
};
struct DataError : ContractError {
    explicit DataError(const std::string& msg) : ContractError(msg) {}
};
struct ParseError : ContractError {
    explicit ParseError(const std::string& msg) : ContractError(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major 64-bit tensor with an optional gradient buffer.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;   // empty until ensure_grad()
    bool requires_grad = false; // participates in the differentiation graph

    Tensor() = default;
    Tensor(std::vector<std::int64_t> s, std::vector<double> d, bool rg = false);

    static TensorPtr zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
    static TensorPtr from(std::vector<std::int64_t> shape, std::vector<double> values,
                          bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    /// Extent along an axis; negative axes count from the end.
    std::int64_t extent(int axis) const;
    bool is_scalar() const { return data.size() == 1; }

    void ensure_grad();
    void zero_grad();
    bool all_finite() const;
    std::string shape_str() const;
};

std::string shape_to_string(const std::vector<std::int64_t>& shape);
std::int64_t shape_product(const std::vector<std::int64_t>& shape);

/// Ordered record of executed differentiable operations. Activated via
/// GradTape::Scope; ops record themselves onto the active tape. Reverse
/// replay of the record implements backpropagation.
class GradTape {
public:
    using BackwardFn = std::function<void()>;

    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    class Scope {
    public:
        explicit Scope(GradTape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        GradTape* previous_;
    };

    static GradTape* active();

    void record(TensorPtr output, BackwardFn fn);
    /// Seeds d(loss)/d(loss) = 1 and replays the record in reverse,
    /// visiting each recorded operation exactly once.
    void backward(const TensorPtr& loss);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        TensorPtr output;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
};

/// Spec-facing alias for GradTape::backward.
void backward(const TensorPtr& loss, GradTape& tape);

// ---------------------------------------------------------------------------
// Differentiable operations. All return freshly allocated tensors; when a
// GradTape is active and any input requires grad, the op is recorded.
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double factor);
/// Multiply every element of `a` by the single-element tensor `s`.
TensorPtr mul_scalar_tensor(const TensorPtr& a, const TensorPtr& s);
/// Add the single-element tensor `s` to every element of `a`.
TensorPtr add_scalar_tensor(const TensorPtr& a, const TensorPtr& s);
TensorPtr relu(const TensorPtr& a);
TensorPtr sum_all(const TensorPtr& a);
/// Same data, new extents (sizes must agree).
TensorPtr reshape(const TensorPtr& a, std::vector<std::int64_t> shape);
/// Mean over one axis (negative axes allowed).
TensorPtr mean_axis(const TensorPtr& a, int axis);
/// A[m,k] * B[n,k]^T -> [m,n]
TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);
/// x[..., D_in] * weight[D_out, D_in]^T + bias -> [..., D_out]
TensorPtr affine(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias);
/// Row selection with scatter-add backward: x[R, ...] -> [indices.size(), ...]
TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& indices);
/// L2-normalize each row of x[B, D]. Zero-norm rows are a numeric-guard error.
TensorPtr rows_l2_normalize(const TensorPtr& x);
/// Tempered softmax over the trailing axis: softmax(logits / temperature).
TensorPtr softmax_tempered(const TensorPtr& logits, double temperature);
/// Mean cross entropy of logits[B, S] against integer labels.
TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<std::int64_t>& labels);

struct Conv2dSpec {
    std::int64_t stride_f = 1;
    std::int64_t stride_t = 1;
    std::int64_t pad_f = 0;
    std::int64_t pad_t = 0;
};

/// 2-D correlation (no kernel flip) with zero padding.
/// x is [N,C,F,T] or [C,F,T]; kernel is [C_out,C_in,kh,kw]; bias is [C_out].
/// A 3-D input yields a 3-D output.
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernel, const TensorPtr& bias,
                 const Conv2dSpec& spec);

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                             std::int64_t pad);

enum class BatchNormMode { Train, Eval };

/// Per-channel batch normalization state for [N,C,F,T] activations.
/// gamma/beta are trainable; running statistics are plain buffers.
struct BatchNorm {
    TensorPtr gamma;
    TensorPtr beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    explicit BatchNorm(std::int64_t channels);
};

TensorPtr batch_norm(const TensorPtr& x, BatchNorm& bn, BatchNormMode mode);

// Shape-plumbing ops used by the model zoo and the dynamic-convolution layer.

/// Mean over the frequency axis: [N,C,F,T] -> [N,C,T]
TensorPtr freq_mean(const TensorPtr& x);
/// Mean over the trailing time axis: [N,C,T] -> [N,C]
TensorPtr time_mean(const TensorPtr& x);
/// [1,C,T] -> [T,C]
TensorPtr frames_from_ct(const TensorPtr& x);
/// Gather input time columns flattened over (C,F):
/// x[N,C,F,T], indices[T'] -> [N, T', C*F]
TensorPtr gather_time_columns(const TensorPtr& x, const std::vector<std::int64_t>& indices);
/// Repeat the single row of x[N,1,D] T' times -> [N,T',D]
TensorPtr broadcast_rows(const TensorPtr& x, std::int64_t t_out);
/// Per-time-bin mixture of K branch outputs:
/// out[n,c,f,t] = sum_k attn[n,t,k] * branches[k][n,c,f,t]
TensorPtr mix_time(const std::vector<TensorPtr>& branches, const TensorPtr& attn);
/// Extends the time axis by `pad` wrapped columns on each side:
/// [N,C,F,T] -> [N,C,F,T+2*pad] with out[..,t] = x[.., (t - pad) mod T].
TensorPtr wrap_pad_time(const TensorPtr& x, std::int64_t pad);

/// Throws DataError when any element is NaN/Inf. `what` names the tensor.
void assert_finite(const Tensor& t, const std::string& what);

/// Deterministic RNG independent of the standard library's distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n);
    /// Standard normal via Box-Muller.
    double normal();
    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<std::size_t>(i)],
                      v[static_cast<std::size_t>(uniform_int(i + 1))]);
        }
    }

private:
    std::uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace tdy
