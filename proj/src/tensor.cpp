#include "tdy/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace tdy {

namespace {

thread_local GradTape* g_active_tape = nullptr;

std::int64_t normalize_axis(int axis, int rank) {
    int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    }
    return a;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

/// Returns the active tape when any input is on the differentiation path.
GradTape* trace_target(const std::vector<TensorPtr>& inputs) {
    GradTape* tape = GradTape::active();
    if (tape == nullptr) {
        return nullptr;
    }
    for (const auto& t : inputs) {
        if (t && t->requires_grad) {
            return tape;
        }
    }
    return nullptr;
}

void mark_traced(const TensorPtr& out, const std::vector<TensorPtr>& inputs) {
    out->requires_grad = true;
    out->ensure_grad();
    for (const auto& t : inputs) {
        if (t && t->requires_grad) {
            t->ensure_grad();
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape_product(shape) != static_cast<std::int64_t>(data.size())) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_to_string(shape));
    }
}

TensorPtr Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    auto n = static_cast<std::size_t>(shape_product(shape));
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    auto n = static_cast<std::size_t>(shape_product(shape));
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr Tensor::from(std::vector<std::int64_t> shape, std::vector<double> values,
                       bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), requires_grad);
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return std::make_shared<Tensor>(std::vector<std::int64_t>{1}, std::vector<double>{value},
                                    requires_grad);
}

std::int64_t Tensor::extent(int axis) const {
    return shape[static_cast<std::size_t>(normalize_axis(axis, rank()))];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string Tensor::shape_str() const {
    return shape_to_string(shape);
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << "]";
    return os.str();
}

std::int64_t shape_product(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) {
        if (e < 0) {
            throw DimensionError("negative extent in shape " + shape_to_string(shape));
        }
        n *= e;
    }
    return n;
}

void assert_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) {
        throw DataError(what + ": non-finite value encountered");
    }
}

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

GradTape::Scope::Scope(GradTape& tape) : previous_(g_active_tape) {
    g_active_tape = &tape;
}

GradTape::Scope::~Scope() {
    g_active_tape = previous_;
}

GradTape* GradTape::active() {
    return g_active_tape;
}

void GradTape::record(TensorPtr output, BackwardFn fn) {
    nodes_.push_back(Node{std::move(output), std::move(fn)});
}

void GradTape::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw ContractError("backward: loss must be scalar, got shape " + loss->shape_str());
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->fn();
    }
}

void backward(const TensorPtr& loss, GradTape& tape) {
    tape.backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(*a, *b, "add");
    auto out = Tensor::from(a->shape, a->data);
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] += b->data[i];
    }
    if (GradTape* tape = trace_target({a, b})) {
        mark_traced(out, {a, b});
        tape->record(out, [a, b, out] {
            const std::size_t n = out->grad.size();
            if (a->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(*a, *b, "sub");
    auto out = Tensor::from(a->shape, a->data);
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] -= b->data[i];
    }
    if (GradTape* tape = trace_target({a, b})) {
        mark_traced(out, {a, b});
        tape->record(out, [a, b, out] {
            const std::size_t n = out->grad.size();
            if (a->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) b->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(*a, *b, "mul");
    auto out = Tensor::from(a->shape, a->data);
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] *= b->data[i];
    }
    if (GradTape* tape = trace_target({a, b})) {
        mark_traced(out, {a, b});
        tape->record(out, [a, b, out] {
            const std::size_t n = out->grad.size();
            if (a->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

TensorPtr scale(const TensorPtr& a, double factor) {
    auto out = Tensor::from(a->shape, a->data);
    for (double& v : out->data) {
        v *= factor;
    }
    if (GradTape* tape = trace_target({a})) {
        mark_traced(out, {a});
        tape->record(out, [a, out, factor] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += factor * out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr mul_scalar_tensor(const TensorPtr& a, const TensorPtr& s) {
    if (!s->is_scalar()) {
        throw DimensionError("mul_scalar_tensor: scalar operand has shape " + s->shape_str());
    }
    const double sv = s->data[0];
    auto out = Tensor::from(a->shape, a->data);
    for (double& v : out->data) {
        v *= sv;
    }
    if (GradTape* tape = trace_target({a, s})) {
        mark_traced(out, {a, s});
        tape->record(out, [a, s, out, sv] {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < out->grad.size(); ++i) {
                    a->grad[i] += sv * out->grad[i];
                }
            }
            if (s->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < out->grad.size(); ++i) {
                    acc += a->data[i] * out->grad[i];
                }
                s->grad[0] += acc;
            }
        });
    }
    return out;
}

TensorPtr add_scalar_tensor(const TensorPtr& a, const TensorPtr& s) {
    if (!s->is_scalar()) {
        throw DimensionError("add_scalar_tensor: scalar operand has shape " + s->shape_str());
    }
    const double sv = s->data[0];
    auto out = Tensor::from(a->shape, a->data);
    for (double& v : out->data) {
        v += sv;
    }
    if (GradTape* tape = trace_target({a, s})) {
        mark_traced(out, {a, s});
        tape->record(out, [a, s, out] {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < out->grad.size(); ++i) {
                    a->grad[i] += out->grad[i];
                }
            }
            if (s->requires_grad) {
                double acc = 0.0;
                for (double g : out->grad) acc += g;
                s->grad[0] += acc;
            }
        });
    }
    return out;
}

TensorPtr relu(const TensorPtr& a) {
    auto out = Tensor::from(a->shape, a->data);
    for (double& v : out->data) {
        v = v > 0.0 ? v : 0.0;
    }
    if (GradTape* tape = trace_target({a})) {
        mark_traced(out, {a});
        tape->record(out, [a, out] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                if (a->data[i] > 0.0) {
                    a->grad[i] += out->grad[i];
                }
            }
        });
    }
    return out;
}

TensorPtr reshape(const TensorPtr& a, std::vector<std::int64_t> shape) {
    if (shape_product(shape) != a->size()) {
        throw DimensionError("reshape: cannot view " + a->shape_str() + " as " +
                             shape_to_string(shape));
    }
    auto out = Tensor::from(std::move(shape), a->data);
    if (GradTape* tape = trace_target({a})) {
        mark_traced(out, {a});
        tape->record(out, [a, out] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr sum_all(const TensorPtr& a) {
    double acc = 0.0;
    for (double v : a->data) {
        acc += v;
    }
    auto out = Tensor::scalar(acc);
    if (GradTape* tape = trace_target({a})) {
        mark_traced(out, {a});
        tape->record(out, [a, out] {
            const double g = out->grad[0];
            for (double& v : a->grad) {
                v += g;
            }
        });
    }
    return out;
}

TensorPtr mean_axis(const TensorPtr& a, int axis) {
    const std::int64_t ax = normalize_axis(axis, a->rank());
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < ax; ++i) outer *= a->shape[static_cast<std::size_t>(i)];
    for (std::int64_t i = ax + 1; i < a->rank(); ++i) inner *= a->shape[static_cast<std::size_t>(i)];
    const std::int64_t reduce = a->shape[static_cast<std::size_t>(ax)];
    if (reduce == 0) {
        throw DimensionError("mean_axis: cannot reduce over empty axis");
    }

    std::vector<std::int64_t> out_shape;
    for (std::int64_t i = 0; i < a->rank(); ++i) {
        if (i != ax) out_shape.push_back(a->shape[static_cast<std::size_t>(i)]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    auto out = Tensor::zeros(out_shape);

    const double inv = 1.0 / static_cast<double>(reduce);
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t r = 0; r < reduce; ++r) {
            const double* src = a->data.data() + (o * reduce + r) * inner;
            double* dst = out->data.data() + o * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                dst[i] += src[i] * inv;
            }
        }
    }
    if (GradTape* tape = trace_target({a})) {
        mark_traced(out, {a});
        tape->record(out, [a, out, outer, reduce, inner, inv] {
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t r = 0; r < reduce; ++r) {
                    double* dst = a->grad.data() + (o * reduce + r) * inner;
                    const double* src = out->grad.data() + o * inner;
                    for (std::int64_t i = 0; i < inner; ++i) {
                        dst[i] += src[i] * inv;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[1]) {
        throw DimensionError("matmul_nt: incompatible shapes " + a->shape_str() + " and " +
                             b->shape_str());
    }
    const std::int64_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    auto out = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a->data.data() + i * k;
        double* orow = out->data.data() + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b->data.data() + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            orow[j] = acc;
        }
    }
    if (GradTape* tape = trace_target({a, b})) {
        mark_traced(out, {a, b});
        tape->record(out, [a, b, out, m, k, n] {
            for (std::int64_t i = 0; i < m; ++i) {
                const double* grow = out->grad.data() + i * n;
                for (std::int64_t j = 0; j < n; ++j) {
                    const double g = grow[j];
                    if (g == 0.0) continue;
                    if (a->requires_grad) {
                        double* da = a->grad.data() + i * k;
                        const double* brow = b->data.data() + j * k;
                        for (std::int64_t p = 0; p < k; ++p) da[p] += g * brow[p];
                    }
                    if (b->requires_grad) {
                        double* db = b->grad.data() + j * k;
                        const double* arow = a->data.data() + i * k;
                        for (std::int64_t p = 0; p < k; ++p) db[p] += g * arow[p];
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr affine(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias) {
    if (weight->rank() != 2) {
        throw DimensionError("affine: weight must be rank 2, got " + weight->shape_str());
    }
    const std::int64_t d_out = weight->shape[0], d_in = weight->shape[1];
    if (x->rank() < 1 || x->shape.back() != d_in) {
        throw DimensionError("affine: trailing extent of input " + x->shape_str() +
                             " does not match weight " + weight->shape_str());
    }
    if (bias->rank() != 1 || bias->shape[0] != d_out) {
        throw DimensionError("affine: bias shape " + bias->shape_str() + " expected [" +
                             std::to_string(d_out) + "]");
    }
    std::int64_t rows = 1;
    for (int i = 0; i + 1 < x->rank(); ++i) rows *= x->shape[static_cast<std::size_t>(i)];

    std::vector<std::int64_t> out_shape(x->shape.begin(), x->shape.end() - 1);
    out_shape.push_back(d_out);
    auto out = Tensor::zeros(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xrow = x->data.data() + r * d_in;
        double* orow = out->data.data() + r * d_out;
        for (std::int64_t o = 0; o < d_out; ++o) {
            const double* wrow = weight->data.data() + o * d_in;
            double acc = bias->data[static_cast<std::size_t>(o)];
            for (std::int64_t i = 0; i < d_in; ++i) {
                acc += xrow[i] * wrow[i];
            }
            orow[o] = acc;
        }
    }
    if (GradTape* tape = trace_target({x, weight, bias})) {
        mark_traced(out, {x, weight, bias});
        tape->record(out, [x, weight, bias, out, rows, d_in, d_out] {
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* grow = out->grad.data() + r * d_out;
                const double* xrow = x->data.data() + r * d_in;
                for (std::int64_t o = 0; o < d_out; ++o) {
                    const double g = grow[o];
                    if (g == 0.0) continue;
                    if (bias->requires_grad) bias->grad[static_cast<std::size_t>(o)] += g;
                    const double* wrow = weight->data.data() + o * d_in;
                    if (x->requires_grad) {
                        double* dx = x->grad.data() + r * d_in;
                        for (std::int64_t i = 0; i < d_in; ++i) dx[i] += g * wrow[i];
                    }
                    if (weight->requires_grad) {
                        double* dw = weight->grad.data() + o * d_in;
                        for (std::int64_t i = 0; i < d_in; ++i) dw[i] += g * xrow[i];
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& indices) {
    if (x->rank() < 1) {
        throw DimensionError("gather_rows: input must have at least one axis");
    }
    const std::int64_t rows = x->shape[0];
    std::int64_t inner = 1;
    for (int i = 1; i < x->rank(); ++i) inner *= x->shape[static_cast<std::size_t>(i)];
    for (std::int64_t idx : indices) {
        if (idx < 0 || idx >= rows) {
            throw DimensionError("gather_rows: index " + std::to_string(idx) +
                                 " out of range [0," + std::to_string(rows) + ")");
        }
    }
    std::vector<std::int64_t> out_shape = x->shape;
    out_shape[0] = static_cast<std::int64_t>(indices.size());
    auto out = Tensor::zeros(out_shape);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::memcpy(out->data.data() + static_cast<std::int64_t>(r) * inner,
                    x->data.data() + indices[r] * inner, sizeof(double) * static_cast<std::size_t>(inner));
    }
    if (GradTape* tape = trace_target({x})) {
        mark_traced(out, {x});
        tape->record(out, [x, out, indices, inner] {
            for (std::size_t r = 0; r < indices.size(); ++r) {
                const double* g = out->grad.data() + static_cast<std::int64_t>(r) * inner;
                double* dx = x->grad.data() + indices[r] * inner;
                for (std::int64_t i = 0; i < inner; ++i) dx[i] += g[i];
            }
        });
    }
    return out;
}

TensorPtr rows_l2_normalize(const TensorPtr& x) {
    if (x->rank() != 2) {
        throw DimensionError("rows_l2_normalize: expected rank 2, got " + x->shape_str());
    }
    const std::int64_t rows = x->shape[0], d = x->shape[1];
    auto out = Tensor::zeros(x->shape);
    std::vector<double> norms(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* src = x->data.data() + r * d;
        double sq = 0.0;
        for (std::int64_t i = 0; i < d; ++i) sq += src[i] * src[i];
        const double n = std::sqrt(sq);
        if (!(n > 1e-30)) {
            throw DataError("rows_l2_normalize: zero-norm row " + std::to_string(r));
        }
        norms[static_cast<std::size_t>(r)] = n;
        double* dst = out->data.data() + r * d;
        for (std::int64_t i = 0; i < d; ++i) dst[i] = src[i] / n;
    }
    if (GradTape* tape = trace_target({x})) {
        mark_traced(out, {x});
        tape->record(out, [x, out, norms, rows, d] {
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* g = out->grad.data() + r * d;
                const double* y = out->data.data() + r * d;
                double* dx = x->grad.data() + r * d;
                double dot = 0.0;
                for (std::int64_t i = 0; i < d; ++i) dot += g[i] * y[i];
                const double inv = 1.0 / norms[static_cast<std::size_t>(r)];
                for (std::int64_t i = 0; i < d; ++i) {
                    dx[i] += (g[i] - y[i] * dot) * inv;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax and cross entropy
// ---------------------------------------------------------------------------

TensorPtr softmax_tempered(const TensorPtr& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw ParameterError("softmax_tempered: temperature must be > 0, got " +
                             std::to_string(temperature));
    }
    if (logits->rank() < 1) {
        throw DimensionError("softmax_tempered: input must have at least one axis");
    }
    const std::int64_t k = logits->shape.back();
    const std::int64_t slices = logits->size() / k;
    auto out = Tensor::zeros(logits->shape);
    const double inv_t = 1.0 / temperature;
    for (std::int64_t s = 0; s < slices; ++s) {
        const double* z = logits->data.data() + s * k;
        double* y = out->data.data() + s * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < k; ++i) {
            if (!std::isfinite(z[i])) {
                throw DataError("softmax_tempered: non-finite logit");
            }
            mx = std::max(mx, z[i]);
        }
        double denom = 0.0;
        for (std::int64_t i = 0; i < k; ++i) {
            y[i] = std::exp((z[i] - mx) * inv_t);
            denom += y[i];
        }
        const double inv_d = 1.0 / denom;
        for (std::int64_t i = 0; i < k; ++i) {
            y[i] *= inv_d;
        }
    }
    if (GradTape* tape = trace_target({logits})) {
        mark_traced(out, {logits});
        tape->record(out, [logits, out, slices, k, inv_t] {
            for (std::int64_t s = 0; s < slices; ++s) {
                const double* g = out->grad.data() + s * k;
                const double* y = out->data.data() + s * k;
                double* dz = logits->grad.data() + s * k;
                double dot = 0.0;
                for (std::int64_t i = 0; i < k; ++i) dot += g[i] * y[i];
                for (std::int64_t i = 0; i < k; ++i) {
                    dz[i] += inv_t * y[i] * (g[i] - dot);
                }
            }
        });
    }
    return out;
}

TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<std::int64_t>& labels) {
    if (logits->rank() != 2) {
        throw DimensionError("cross_entropy: expected logits [batch, classes], got " +
                             logits->shape_str());
    }
    const std::int64_t batch = logits->shape[0], classes = logits->shape[1];
    if (static_cast<std::int64_t>(labels.size()) != batch) {
        throw DimensionError("cross_entropy: label count " + std::to_string(labels.size()) +
                             " does not match batch " + std::to_string(batch));
    }
    for (std::int64_t lbl : labels) {
        if (lbl < 0 || lbl >= classes) {
            throw DataError("cross_entropy: label " + std::to_string(lbl) + " out of range [0," +
                            std::to_string(classes) + ")");
        }
    }
    // Cache softmax rows for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(logits->data.size());
    double loss = 0.0;
    for (std::int64_t r = 0; r < batch; ++r) {
        const double* z = logits->data.data() + r * classes;
        double* p = probs->data() + r * classes;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < classes; ++i) mx = std::max(mx, z[i]);
        double denom = 0.0;
        for (std::int64_t i = 0; i < classes; ++i) {
            p[i] = std::exp(z[i] - mx);
            denom += p[i];
        }
        const double inv_d = 1.0 / denom;
        for (std::int64_t i = 0; i < classes; ++i) p[i] *= inv_d;
        loss -= std::log(p[labels[static_cast<std::size_t>(r)]]);
    }
    auto out = Tensor::scalar(loss / static_cast<double>(batch));
    if (GradTape* tape = trace_target({logits})) {
        mark_traced(out, {logits});
        tape->record(out, [logits, out, probs, labels, batch, classes] {
            const double g = out->grad[0] / static_cast<double>(batch);
            for (std::int64_t r = 0; r < batch; ++r) {
                const double* p = probs->data() + r * classes;
                double* dz = logits->grad.data() + r * classes;
                const std::int64_t lbl = labels[static_cast<std::size_t>(r)];
                for (std::int64_t i = 0; i < classes; ++i) {
                    dz[i] += g * (p[i] - (i == lbl ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                             std::int64_t pad) {
    if (stride < 1) {
        throw ParameterError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    }
    if (k > in + 2 * pad) {
        throw DimensionError("conv2d: kernel extent " + std::to_string(k) +
                             " exceeds padded input extent " + std::to_string(in + 2 * pad));
    }
    return (in + 2 * pad - k) / stride + 1;
}

namespace {

struct ConvDims {
    std::int64_t n, ci, f, t;     // input
    std::int64_t co, kh, kw;      // kernel
    std::int64_t fo, to;          // output
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                   const Conv2dSpec& spec) {
    if (x.rank() != 3 && x.rank() != 4) {
        throw DimensionError("conv2d: input must be [C,F,T] or [N,C,F,T], got " + x.shape_str());
    }
    if (kernel.rank() != 4) {
        throw DimensionError("conv2d: kernel must be [C_out,C_in,kh,kw], got " +
                             kernel.shape_str());
    }
    ConvDims d{};
    const bool batched = x.rank() == 4;
    d.n = batched ? x.shape[0] : 1;
    d.ci = x.shape[batched ? 1 : 0];
    d.f = x.shape[batched ? 2 : 1];
    d.t = x.shape[batched ? 3 : 2];
    d.co = kernel.shape[0];
    d.kh = kernel.shape[2];
    d.kw = kernel.shape[3];
    if (kernel.shape[1] != d.ci) {
        throw DimensionError("conv2d: input channels " + std::to_string(d.ci) +
                             " do not match kernel channels " + std::to_string(kernel.shape[1]));
    }
    if (bias.rank() != 1 || bias.shape[0] != d.co) {
        throw DimensionError("conv2d: bias shape " + bias.shape_str() + " expected [" +
                             std::to_string(d.co) + "]");
    }
    d.fo = conv_out_extent(d.f, d.kh, spec.stride_f, spec.pad_f);
    d.to = conv_out_extent(d.t, d.kw, spec.stride_t, spec.pad_t);
    return d;
}

// Valid output range [lo, hi) for one kernel tap, so that the input index
// o*stride + k - pad stays inside [0, in).
inline void tap_range(std::int64_t k, std::int64_t pad, std::int64_t stride, std::int64_t in,
                      std::int64_t out, std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t off = k - pad;
    lo = off < 0 ? (-off + stride - 1) / stride : 0;
    const std::int64_t max_i = in - 1 - off;
    hi = max_i < 0 ? 0 : std::min(out, max_i / stride + 1);
    if (lo > hi) lo = hi;
}

} // namespace

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernel, const TensorPtr& bias,
                 const Conv2dSpec& spec) {
    const ConvDims d = conv_dims(*x, *kernel, *bias, spec);
    const bool batched = x->rank() == 4;
    std::vector<std::int64_t> out_shape =
        batched ? std::vector<std::int64_t>{d.n, d.co, d.fo, d.to}
                : std::vector<std::int64_t>{d.co, d.fo, d.to};
    auto out = Tensor::zeros(out_shape);

    const std::int64_t sf = spec.stride_f, st = spec.stride_t, pf = spec.pad_f, pt = spec.pad_t;
    const double* xd = x->data.data();
    const double* wd = kernel->data.data();
    double* od = out->data.data();

    for (std::int64_t n = 0; n < d.n; ++n) {
        const double* xn = xd + n * d.ci * d.f * d.t;
        for (std::int64_t co = 0; co < d.co; ++co) {
            double* oplane = od + (n * d.co + co) * d.fo * d.to;
            const double bv = bias->data[static_cast<std::size_t>(co)];
            for (std::int64_t i = 0; i < d.fo * d.to; ++i) oplane[i] = bv;
            for (std::int64_t ci = 0; ci < d.ci; ++ci) {
                const double* xplane = xn + ci * d.f * d.t;
                const double* wplane = wd + (co * d.ci + ci) * d.kh * d.kw;
                for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                    std::int64_t flo, fhi;
                    tap_range(kh, pf, sf, d.f, d.fo, flo, fhi);
                    for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                        const double w = wplane[kh * d.kw + kw];
                        if (w == 0.0) continue;
                        std::int64_t tlo, thi;
                        tap_range(kw, pt, st, d.t, d.to, tlo, thi);
                        for (std::int64_t fo = flo; fo < fhi; ++fo) {
                            const double* xrow = xplane + (fo * sf + kh - pf) * d.t + (kw - pt);
                            double* orow = oplane + fo * d.to;
                            if (st == 1) {
                                for (std::int64_t to = tlo; to < thi; ++to) {
                                    orow[to] += w * xrow[to];
                                }
                            } else {
                                for (std::int64_t to = tlo; to < thi; ++to) {
                                    orow[to] += w * xrow[to * st];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (GradTape* tape = trace_target({x, kernel, bias})) {
        mark_traced(out, {x, kernel, bias});
        tape->record(out, [x, kernel, bias, out, d, sf, st, pf, pt] {
            const double* g = out->grad.data();
            for (std::int64_t n = 0; n < d.n; ++n) {
                for (std::int64_t co = 0; co < d.co; ++co) {
                    const double* gplane = g + (n * d.co + co) * d.fo * d.to;
                    if (bias->requires_grad) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < d.fo * d.to; ++i) acc += gplane[i];
                        bias->grad[static_cast<std::size_t>(co)] += acc;
                    }
                    for (std::int64_t ci = 0; ci < d.ci; ++ci) {
                        const double* xplane = x->data.data() + (n * d.ci + ci) * d.f * d.t;
                        double* dxplane =
                            x->requires_grad ? x->grad.data() + (n * d.ci + ci) * d.f * d.t
                                             : nullptr;
                        const double* wplane =
                            kernel->data.data() + (co * d.ci + ci) * d.kh * d.kw;
                        double* dwplane =
                            kernel->requires_grad
                                ? kernel->grad.data() + (co * d.ci + ci) * d.kh * d.kw
                                : nullptr;
                        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                            std::int64_t flo, fhi;
                            tap_range(kh, pf, sf, d.f, d.fo, flo, fhi);
                            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                std::int64_t tlo, thi;
                                tap_range(kw, pt, st, d.t, d.to, tlo, thi);
                                const double w = wplane[kh * d.kw + kw];
                                double wacc = 0.0;
                                for (std::int64_t fo = flo; fo < fhi; ++fo) {
                                    const std::int64_t base = (fo * sf + kh - pf) * d.t + (kw - pt);
                                    const double* grow = gplane + fo * d.to;
                                    if (dwplane != nullptr) {
                                        const double* xrow = xplane + base;
                                        for (std::int64_t to = tlo; to < thi; ++to) {
                                            wacc += grow[to] * xrow[to * st];
                                        }
                                    }
                                    if (dxplane != nullptr) {
                                        double* dxrow = dxplane + base;
                                        for (std::int64_t to = tlo; to < thi; ++to) {
                                            dxrow[to * st] += w * grow[to];
                                        }
                                    }
                                }
                                if (dwplane != nullptr) {
                                    dwplane[kh * d.kw + kw] += wacc;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(std::int64_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(static_cast<std::size_t>(channels), 0.0),
      running_var(static_cast<std::size_t>(channels), 1.0) {}

TensorPtr batch_norm(const TensorPtr& x, BatchNorm& bn, BatchNormMode mode) {
    if (x->rank() != 4) {
        throw DimensionError("batch_norm: expected [N,C,F,T], got " + x->shape_str());
    }
    const std::int64_t n = x->shape[0], c = x->shape[1], f = x->shape[2], t = x->shape[3];
    if (static_cast<std::int64_t>(bn.running_mean.size()) != c) {
        throw DimensionError("batch_norm: channel count " + std::to_string(c) +
                             " does not match parameters (" +
                             std::to_string(bn.running_mean.size()) + ")");
    }
    if (mode == BatchNormMode::Train && n < 2) {
        throw DataError("batch_norm: degenerate batch (N=" + std::to_string(n) +
                        ", train mode needs N >= 2)");
    }
    const std::int64_t plane = f * t;
    const std::int64_t m = n * plane;
    auto out = Tensor::zeros(x->shape);

    std::vector<double> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
    if (mode == BatchNormMode::Train) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
                const double* src = x->data.data() + (b * c + ch) * plane;
                for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
            }
            const double mu = acc / static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
                const double* src = x->data.data() + (b * c + ch) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double dv = src[i] - mu;
                    var += dv * dv;
                }
            }
            var /= static_cast<double>(m);
            mean[static_cast<std::size_t>(ch)] = mu;
            inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var + bn.epsilon);
            bn.running_mean[static_cast<std::size_t>(ch)] =
                (1.0 - bn.momentum) * bn.running_mean[static_cast<std::size_t>(ch)] +
                bn.momentum * mu;
            bn.running_var[static_cast<std::size_t>(ch)] =
                (1.0 - bn.momentum) * bn.running_var[static_cast<std::size_t>(ch)] +
                bn.momentum * var;
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            mean[static_cast<std::size_t>(ch)] = bn.running_mean[static_cast<std::size_t>(ch)];
            inv_std[static_cast<std::size_t>(ch)] =
                1.0 / std::sqrt(bn.running_var[static_cast<std::size_t>(ch)] + bn.epsilon);
        }
    }

    // Cache normalized activations for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(x->data.size());
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* src = x->data.data() + (b * c + ch) * plane;
            double* xh = xhat->data() + (b * c + ch) * plane;
            double* dst = out->data.data() + (b * c + ch) * plane;
            const double mu = mean[static_cast<std::size_t>(ch)];
            const double is = inv_std[static_cast<std::size_t>(ch)];
            const double gm = bn.gamma->data[static_cast<std::size_t>(ch)];
            const double bt = bn.beta->data[static_cast<std::size_t>(ch)];
            for (std::int64_t i = 0; i < plane; ++i) {
                xh[i] = (src[i] - mu) * is;
                dst[i] = gm * xh[i] + bt;
            }
        }
    }

    TensorPtr gamma = bn.gamma, beta = bn.beta;
    if (GradTape* tape = trace_target({x, gamma, beta})) {
        mark_traced(out, {x, gamma, beta});
        const bool train = mode == BatchNormMode::Train;
        tape->record(out, [x, gamma, beta, out, xhat, inv_std, n, c, plane, m, train] {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::int64_t b = 0; b < n; ++b) {
                    const double* g = out->grad.data() + (b * c + ch) * plane;
                    const double* xh = xhat->data() + (b * c + ch) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        sum_g += g[i];
                        sum_gx += g[i] * xh[i];
                    }
                }
                if (gamma->requires_grad) gamma->grad[static_cast<std::size_t>(ch)] += sum_gx;
                if (beta->requires_grad) beta->grad[static_cast<std::size_t>(ch)] += sum_g;
                if (!x->requires_grad) continue;
                const double gm = gamma->data[static_cast<std::size_t>(ch)];
                const double is = inv_std[static_cast<std::size_t>(ch)];
                if (train) {
                    const double mean_g = sum_g / static_cast<double>(m);
                    const double mean_gx = sum_gx / static_cast<double>(m);
                    for (std::int64_t b = 0; b < n; ++b) {
                        const double* g = out->grad.data() + (b * c + ch) * plane;
                        const double* xh = xhat->data() + (b * c + ch) * plane;
                        double* dx = x->grad.data() + (b * c + ch) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            dx[i] += gm * is * (g[i] - mean_g - xh[i] * mean_gx);
                        }
                    }
                } else {
                    for (std::int64_t b = 0; b < n; ++b) {
                        const double* g = out->grad.data() + (b * c + ch) * plane;
                        double* dx = x->grad.data() + (b * c + ch) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            dx[i] += gm * is * g[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

TensorPtr freq_mean(const TensorPtr& x) {
    if (x->rank() != 4) {
        throw DimensionError("freq_mean: expected [N,C,F,T], got " + x->shape_str());
    }
    return mean_axis(x, 2);
}

TensorPtr time_mean(const TensorPtr& x) {
    return mean_axis(x, -1);
}

TensorPtr frames_from_ct(const TensorPtr& x) {
    if (x->rank() != 3 || x->shape[0] != 1) {
        throw DimensionError("frames_from_ct: expected [1,C,T], got " + x->shape_str());
    }
    const std::int64_t c = x->shape[1], t = x->shape[2];
    auto out = Tensor::zeros({t, c});
    for (std::int64_t i = 0; i < c; ++i) {
        for (std::int64_t j = 0; j < t; ++j) {
            out->data[static_cast<std::size_t>(j * c + i)] =
                x->data[static_cast<std::size_t>(i * t + j)];
        }
    }
    if (GradTape* tape = trace_target({x})) {
        mark_traced(out, {x});
        tape->record(out, [x, out, c, t] {
            for (std::int64_t i = 0; i < c; ++i) {
                for (std::int64_t j = 0; j < t; ++j) {
                    x->grad[static_cast<std::size_t>(i * t + j)] +=
                        out->grad[static_cast<std::size_t>(j * c + i)];
                }
            }
        });
    }
    return out;
}

TensorPtr gather_time_columns(const TensorPtr& x, const std::vector<std::int64_t>& indices) {
    if (x->rank() != 4) {
        throw DimensionError("gather_time_columns: expected [N,C,F,T], got " + x->shape_str());
    }
    const std::int64_t n = x->shape[0], c = x->shape[1], f = x->shape[2], t = x->shape[3];
    for (std::int64_t idx : indices) {
        if (idx < 0 || idx >= t) {
            throw DimensionError("gather_time_columns: index " + std::to_string(idx) +
                                 " out of range [0," + std::to_string(t) + ")");
        }
    }
    const std::int64_t tp = static_cast<std::int64_t>(indices.size());
    auto out = Tensor::zeros({n, tp, c * f});
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t e = 0; e < tp; ++e) {
            double* dst = out->data.data() + (b * tp + e) * c * f;
            const double* src = x->data.data() + b * c * f * t + indices[static_cast<std::size_t>(e)];
            for (std::int64_t cf = 0; cf < c * f; ++cf) {
                dst[cf] = src[cf * t];
            }
        }
    }
    if (GradTape* tape = trace_target({x})) {
        mark_traced(out, {x});
        tape->record(out, [x, out, indices, n, c, f, t, tp] {
            for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t e = 0; e < tp; ++e) {
                    const double* g = out->grad.data() + (b * tp + e) * c * f;
                    double* dx =
                        x->grad.data() + b * c * f * t + indices[static_cast<std::size_t>(e)];
                    for (std::int64_t cf = 0; cf < c * f; ++cf) {
                        dx[cf * t] += g[cf];
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr broadcast_rows(const TensorPtr& x, std::int64_t t_out) {
    if (x->rank() != 3 || x->shape[1] != 1) {
        throw DimensionError("broadcast_rows: expected [N,1,D], got " + x->shape_str());
    }
    const std::int64_t n = x->shape[0], d = x->shape[2];
    auto out = Tensor::zeros({n, t_out, d});
    for (std::int64_t b = 0; b < n; ++b) {
        const double* src = x->data.data() + b * d;
        for (std::int64_t r = 0; r < t_out; ++r) {
            std::memcpy(out->data.data() + (b * t_out + r) * d, src,
                        sizeof(double) * static_cast<std::size_t>(d));
        }
    }
    if (GradTape* tape = trace_target({x})) {
        mark_traced(out, {x});
        tape->record(out, [x, out, n, d, t_out] {
            for (std::int64_t b = 0; b < n; ++b) {
                double* dx = x->grad.data() + b * d;
                for (std::int64_t r = 0; r < t_out; ++r) {
                    const double* g = out->grad.data() + (b * t_out + r) * d;
                    for (std::int64_t i = 0; i < d; ++i) dx[i] += g[i];
                }
            }
        });
    }
    return out;
}

TensorPtr mix_time(const std::vector<TensorPtr>& branches, const TensorPtr& attn) {
    if (branches.empty()) {
        throw DimensionError("mix_time: no branches");
    }
    const auto& shape = branches[0]->shape;
    if (branches[0]->rank() != 4) {
        throw DimensionError("mix_time: branches must be [N,C,F,T], got " +
                             branches[0]->shape_str());
    }
    for (const auto& b : branches) {
        if (b->shape != shape) {
            throw DimensionError("mix_time: branch shape mismatch");
        }
    }
    const std::int64_t n = shape[0], c = shape[1], f = shape[2], t = shape[3];
    const std::int64_t k = static_cast<std::int64_t>(branches.size());
    if (attn->rank() != 3 || attn->shape[0] != n || attn->shape[1] != t || attn->shape[2] != k) {
        throw DimensionError("mix_time: attention shape " + attn->shape_str() + " expected [" +
                             std::to_string(n) + "," + std::to_string(t) + "," +
                             std::to_string(k) + "]");
    }
    auto out = Tensor::zeros(shape);
    const std::int64_t plane = c * f;
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
            const double* yk = branches[static_cast<std::size_t>(ki)]->data.data() + b * plane * t;
            const double* a = attn->data.data() + b * t * k + ki;
            double* dst = out->data.data() + b * plane * t;
            for (std::int64_t cf = 0; cf < plane; ++cf) {
                const double* yrow = yk + cf * t;
                double* orow = dst + cf * t;
                for (std::int64_t ti = 0; ti < t; ++ti) {
                    orow[ti] += a[ti * k] * yrow[ti];
                }
            }
        }
    }
    std::vector<TensorPtr> inputs = branches;
    inputs.push_back(attn);
    if (GradTape* tape = trace_target(inputs)) {
        mark_traced(out, inputs);
        tape->record(out, [branches, attn, out, n, k, t, plane] {
            for (std::int64_t b = 0; b < n; ++b) {
                const double* g = out->grad.data() + b * plane * t;
                for (std::int64_t ki = 0; ki < k; ++ki) {
                    auto& yk = branches[static_cast<std::size_t>(ki)];
                    const double* a = attn->data.data() + b * t * k + ki;
                    if (yk->requires_grad) {
                        double* dyk = yk->grad.data() + b * plane * t;
                        for (std::int64_t cf = 0; cf < plane; ++cf) {
                            const double* grow = g + cf * t;
                            double* drow = dyk + cf * t;
                            for (std::int64_t ti = 0; ti < t; ++ti) {
                                drow[ti] += a[ti * k] * grow[ti];
                            }
                        }
                    }
                    if (attn->requires_grad) {
                        const double* ykd = yk->data.data() + b * plane * t;
                        double* da = attn->grad.data() + b * t * k + ki;
                        for (std::int64_t cf = 0; cf < plane; ++cf) {
                            const double* grow = g + cf * t;
                            const double* yrow = ykd + cf * t;
                            for (std::int64_t ti = 0; ti < t; ++ti) {
                                da[ti * k] += grow[ti] * yrow[ti];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr wrap_pad_time(const TensorPtr& x, std::int64_t pad) {
    if (x->rank() != 4) {
        throw DimensionError("wrap_pad_time: expected [N,C,F,T], got " + x->shape_str());
    }
    if (pad < 0) {
        throw ParameterError("wrap_pad_time: negative pad");
    }
    const std::int64_t n = x->shape[0], c = x->shape[1], f = x->shape[2], t = x->shape[3];
    const std::int64_t tp = t + 2 * pad;
    auto out = Tensor::zeros({n, c, f, tp});
    const std::int64_t rows = n * c * f;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* src = x->data.data() + r * t;
        double* dst = out->data.data() + r * tp;
        for (std::int64_t i = 0; i < tp; ++i) {
            dst[i] = src[((i - pad) % t + t) % t];
        }
    }
    if (GradTape* tape = trace_target({x})) {
        mark_traced(out, {x});
        tape->record(out, [x, out, rows, t, tp, pad] {
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* g = out->grad.data() + r * tp;
                double* dx = x->grad.data() + r * t;
                for (std::int64_t i = 0; i < tp; ++i) {
                    dx[((i - pad) % t + t) % t] += g[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rng (xoshiro256** seeded by splitmix64)
// ---------------------------------------------------------------------------

namespace {
inline std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
inline std::uint64_t rotl64(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
}
} // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& st : state_) {
        st = splitmix64(s);
    }
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl64(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl64(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 0) {
        throw ParameterError("Rng::uniform_int: n must be positive");
    }
    return static_cast<std::int64_t>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<std::uint64_t>(n)) >> 64);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586477 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

} // namespace tdy
