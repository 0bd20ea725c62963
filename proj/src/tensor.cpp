#include "otpel/tensor.hpp"

#include "otpel/error.hpp"
#include "otpel/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace otpel {

using detail::Node;

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

const Node& deref(const Tensor& t, const char* what) {
    if (!t.defined()) fail(Err::contract, std::string(what) + ": undefined tensor");
    return *t.node();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        fail(Err::shape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

bool track(std::initializer_list<const Tensor*> ins) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// Builds the output node; when recording, wires parents and the pullback.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
    auto n = make_node(std::move(shape), std::move(value));
    bool rg = false;
    if (g_grad_enabled) {
        for (const Tensor& p : parents) rg = rg || (p.defined() && p.requires_grad());
    }
    if (rg) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const Tensor& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(n));
}

// Grad accumulation helper: adds src into parent's grad when it wants one.
void accum(Node& parent, const std::vector<double>& src) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    const auto& k = kernels::active();
    k.add(parent.grad.data(), parent.grad.data(), src.data(), src.size());
}

void accum_scaled(Node& parent, const double* src, double c, size_t n) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    kernels::active().add_scaled(parent.grad.data(), src, c, n);
}

} // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    size_t n = shape_numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(n, v));
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        fail(Err::shape, "from_data: " + shape_str(shape) + " does not hold " +
                             std::to_string(data.size()) + " values");
    auto node = make_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

const Shape& Tensor::shape() const { return deref(*this, "shape").shape; }
size_t Tensor::numel() const { return deref(*this, "numel").value.size(); }

size_t Tensor::rows() const {
    const Node& n = deref(*this, "rows");
    return n.shape.empty() ? 1 : n.shape[0];
}

size_t Tensor::cols() const {
    const Node& n = deref(*this, "cols");
    if (n.shape.size() >= 2) return n.shape[1];
    return n.shape.empty() ? 1 : n.shape[0];
}

std::vector<double>& Tensor::values() { return node_->value; }
const std::vector<double>& Tensor::values() const { return deref(*this, "values").value; }

double Tensor::item() const {
    const Node& n = deref(*this, "item");
    if (n.value.size() != 1)
        fail(Err::contract, "item: tensor has " + std::to_string(n.value.size()) + " elements");
    return n.value[0];
}

bool Tensor::requires_grad() const { return deref(*this, "requires_grad").requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    Node& n = *node_;
    if (!n.is_leaf()) fail(Err::contract, "set_requires_grad: only valid on leaf tensors");
    n.requires_grad = rg;
    if (!rg) n.grad.clear();
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    const Node& n = deref(*this, "grad");
    if (n.grad.empty()) fail(Err::contract, "grad: no gradient present");
    return n.grad;
}

void Tensor::zero_grad() {
    if (defined()) node_->grad.clear();
}

Tensor Tensor::detach() const {
    const Node& n = deref(*this, "detach");
    return from_data(n.shape, n.value, false);
}

Tensor Tensor::clone() const {
    const Node& n = deref(*this, "clone");
    return from_data(n.shape, n.value, n.requires_grad);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ops --------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const size_t n = a.numel();
    std::vector<double> out(n);
    kernels::active().add(out.data(), a.values().data(), b.values().data(), n);
    return make_op(a.shape(), std::move(out), {a, b}, [](Node& node) {
        accum(*node.parents[0], node.grad);
        accum(*node.parents[1], node.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const size_t n = a.numel();
    std::vector<double> out(n);
    kernels::active().sub(out.data(), a.values().data(), b.values().data(), n);
    return make_op(a.shape(), std::move(out), {a, b}, [](Node& node) {
        accum(*node.parents[0], node.grad);
        accum_scaled(*node.parents[1], node.grad.data(), -1.0, node.grad.size());
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const size_t n = a.numel();
    std::vector<double> out(n);
    kernels::active().mul(out.data(), a.values().data(), b.values().data(), n);
    return make_op(a.shape(), std::move(out), {a, b}, [](Node& node) {
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i)
                pa.grad[i] += node.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i)
                pb.grad[i] += node.grad[i] * pa.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    const size_t n = a.numel();
    std::vector<double> out(n);
    kernels::active().scale(out.data(), a.values().data(), c, n);
    return make_op(a.shape(), std::move(out), {a}, [c](Node& node) {
        accum_scaled(*node.parents[0], node.grad.data(), c, node.grad.size());
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    const size_t rows = a.rows(), cols = a.cols();
    if (a.shape().size() != 2 || v.numel() != cols)
        fail(Err::shape, "add_rowvec: " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
    std::vector<double> out(a.numel());
    const auto& k = kernels::active();
    for (size_t r = 0; r < rows; ++r)
        k.add(out.data() + r * cols, a.values().data() + r * cols, v.values().data(), cols);
    return make_op(a.shape(), std::move(out), {a, v}, [rows, cols](Node& node) {
        accum(*node.parents[0], node.grad);
        Node& pv = *node.parents[1];
        if (pv.requires_grad) {
            pv.ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) pv.grad[c] += node.grad[r * cols + c];
        }
    });
}

namespace {

Tensor map_elementwise(const Tensor& a, const char* /*name*/,
                       const std::function<double(double)>& fwd,
                       const std::function<double(double)>& dfdx) {
    const size_t n = a.numel();
    std::vector<double> out(n);
    const auto& x = a.values();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(x[i]);
    return make_op(a.shape(), std::move(out), {a}, [dfdx](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i] * dfdx(p.value[i]);
    });
}

} // namespace

Tensor relu(const Tensor& a) {
    return map_elementwise(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return map_elementwise(
        a, "gelu", [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor abs_val(const Tensor& a) {
    return map_elementwise(
        a, "abs", [](double x) { return std::fabs(x); },
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor abs_pow(const Tensor& a, int p) {
    if (p < 1) fail(Err::config, "abs_pow: order must be >= 1, got " + std::to_string(p));
    if (p == 1) return abs_val(a);
    if (p == 2) return mul(a, a);
    return map_elementwise(
        a, "abs_pow", [p](double x) { return std::pow(std::fabs(x), p); },
        [p](double x) {
            double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            return p * std::pow(std::fabs(x), p - 1) * s;
        });
}

Tensor sqrt_clamped(const Tensor& a) {
    return map_elementwise(
        a, "sqrt", [](double x) { return x > 0.0 ? std::sqrt(x) : 0.0; },
        [](double x) { return x > 1e-30 ? 0.5 / std::sqrt(x) : 0.0; });
}

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& a) {
    const auto& x = a.values();
    double acc = 0.0;
    for (double v : x) acc += v; // fixed left-to-right order
    return make_op({1}, {acc}, {a}, [](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        double g = node.grad[0];
        for (double& v : p.grad) v += g;
    });
}

Tensor mean(const Tensor& a) {
    const size_t n = a.numel();
    if (n == 0) fail(Err::contract, "mean: empty tensor");
    const auto& x = a.values();
    double acc = 0.0;
    for (double v : x) acc += v;
    return make_op({1}, {acc / static_cast<double>(n)}, {a}, [n](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        double g = node.grad[0] / static_cast<double>(n);
        for (double& v : p.grad) v += g;
    });
}

// ---- linear algebra -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        fail(Err::shape,
             "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const size_t m = a.rows(), kk = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const auto& k = kernels::active();
    const auto& av = a.values();
    const auto& bv = b.values();
    // Row-update form: every output element accumulates over kk in ascending
    // order, which keeps scalar and SIMD variants bit-identical.
    for (size_t i = 0; i < m; ++i) {
        double* crow = out.data() + i * n;
        for (size_t p = 0; p < kk; ++p) k.axpy(crow, av[i * kk + p], bv.data() + p * n, n);
    }
    return make_op({m, n}, std::move(out), {a, b}, [m, kk, n](Node& node) {
        const auto& ker = kernels::active();
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            // dA = dC * B^T; materialize B^T so rows are contiguous
            std::vector<double> bt(n * kk);
            for (size_t p = 0; p < kk; ++p)
                for (size_t j = 0; j < n; ++j) bt[j * kk + p] = pb.value[p * n + j];
            for (size_t i = 0; i < m; ++i) {
                double* arow = pa.grad.data() + i * kk;
                const double* grow = node.grad.data() + i * n;
                for (size_t j = 0; j < n; ++j) ker.axpy(arow, grow[j], bt.data() + j * kk, kk);
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            // dB = A^T * dC
            for (size_t i = 0; i < m; ++i) {
                const double* grow = node.grad.data() + i * n;
                for (size_t p = 0; p < kk; ++p)
                    ker.axpy(pb.grad.data() + p * n, pa.value[i * kk + p], grow, n);
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) fail(Err::shape, "transpose: need 2-d, got " + shape_str(a.shape()));
    const size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    const auto& x = a.values();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return make_op({c, r}, std::move(out), {a}, [r, c](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) p.grad[i * c + j] += node.grad[j * r + i];
    });
}

Tensor conv1d(const Tensor& input, const Tensor& kernel) {
    if (input.shape().size() != 2) fail(Err::shape, "conv1d: input must be [frames x ch_in]");
    if (kernel.shape().size() != 3)
        fail(Err::shape, "conv1d: kernel must be [width x ch_in x ch_out]");
    const size_t frames = input.shape()[0], ci = input.shape()[1];
    const size_t width = kernel.shape()[0], kci = kernel.shape()[1], co = kernel.shape()[2];
    if (width % 2 == 0)
        fail(Err::config, "conv1d: kernel width must be odd for same padding, got " +
                              std::to_string(width));
    if (kci != ci)
        fail(Err::shape, "conv1d: input channels " + std::to_string(ci) + " vs kernel " +
                             std::to_string(kci));
    const long center = static_cast<long>(width) / 2;
    std::vector<double> out(frames * co, 0.0);
    const auto& k = kernels::active();
    const auto& xv = input.values();
    const auto& kv = kernel.values();
    for (size_t f = 0; f < frames; ++f) {
        double* orow = out.data() + f * co;
        for (size_t w = 0; w < width; ++w) {
            long g = static_cast<long>(f) + static_cast<long>(w) - center;
            if (g < 0 || g >= static_cast<long>(frames)) continue; // zero padding
            const double* xrow = xv.data() + static_cast<size_t>(g) * ci;
            const double* kslab = kv.data() + w * ci * co;
            for (size_t c = 0; c < ci; ++c) k.axpy(orow, xrow[c], kslab + c * co, co);
        }
    }
    return make_op({frames, co}, std::move(out), {input, kernel},
                   [frames, ci, width, co, center](Node& node) {
        const auto& ker = kernels::active();
        Node& px = *node.parents[0];
        Node& pk = *node.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            // d_in[g] += sum_{w, co} d_out[g + center - w] * K[w]; transpose the
            // kernel slabs so the ci axis is contiguous
            std::vector<double> kt(width * co * ci);
            for (size_t w = 0; w < width; ++w)
                for (size_t c = 0; c < ci; ++c)
                    for (size_t o = 0; o < co; ++o)
                        kt[(w * co + o) * ci + c] = pk.value[(w * ci + c) * co + o];
            for (size_t f = 0; f < frames; ++f) {
                const double* grow = node.grad.data() + f * co;
                for (size_t w = 0; w < width; ++w) {
                    long g = static_cast<long>(f) + static_cast<long>(w) - center;
                    if (g < 0 || g >= static_cast<long>(frames)) continue;
                    double* xrow = px.grad.data() + static_cast<size_t>(g) * ci;
                    for (size_t o = 0; o < co; ++o)
                        ker.axpy(xrow, grow[o], kt.data() + (w * co + o) * ci, ci);
                }
            }
        }
        if (pk.requires_grad) {
            pk.ensure_grad();
            for (size_t f = 0; f < frames; ++f) {
                const double* grow = node.grad.data() + f * co;
                for (size_t w = 0; w < width; ++w) {
                    long g = static_cast<long>(f) + static_cast<long>(w) - center;
                    if (g < 0 || g >= static_cast<long>(frames)) continue;
                    const double* xrow = px.value.data() + static_cast<size_t>(g) * ci;
                    double* kslab = pk.grad.data() + w * ci * co;
                    for (size_t c = 0; c < ci; ++c) ker.axpy(kslab + c * co, xrow[c], grow, co);
                }
            }
        }
    });
}

// ---- gather / scatter style ops ------------------------------------------

Tensor embed(const Tensor& table, std::span<const int> tokens) {
    if (table.shape().size() != 2) fail(Err::shape, "embed: table must be [vocab x dim]");
    const size_t vocab = table.rows(), dim = table.cols();
    std::vector<double> out(tokens.size() * dim);
    for (size_t i = 0; i < tokens.size(); ++i) {
        int t = tokens[i];
        if (t < 0 || static_cast<size_t>(t) >= vocab)
            fail(Err::vocab, "token " + std::to_string(t) + " outside vocabulary of " +
                                 std::to_string(vocab));
        std::copy_n(table.values().data() + static_cast<size_t>(t) * dim, dim,
                    out.data() + i * dim);
    }
    std::vector<int> toks(tokens.begin(), tokens.end());
    return make_op({tokens.size(), dim}, std::move(out), {table}, [toks, dim](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const auto& k = kernels::active();
        for (size_t i = 0; i < toks.size(); ++i)
            k.add_scaled(p.grad.data() + static_cast<size_t>(toks[i]) * dim,
                         node.grad.data() + i * dim, 1.0, dim);
    });
}

Tensor repeat_rows(const Tensor& a, int factor) {
    if (factor < 1) fail(Err::config, "repeat_rows: factor must be >= 1");
    if (a.shape().size() != 2) fail(Err::shape, "repeat_rows: need 2-d");
    const size_t rows = a.rows(), cols = a.cols(), f = static_cast<size_t>(factor);
    std::vector<double> out(rows * f * cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < f; ++j)
            std::copy_n(a.values().data() + r * cols, cols, out.data() + (r * f + j) * cols);
    return make_op({rows * f, cols}, std::move(out), {a}, [rows, cols, f](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const auto& k = kernels::active();
        for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < f; ++j)
                k.add_scaled(p.grad.data() + r * cols, node.grad.data() + (r * f + j) * cols, 1.0,
                             cols);
    });
}

Tensor take_rows(const Tensor& a, std::span<const size_t> idx) {
    if (a.shape().size() != 2) fail(Err::shape, "take_rows: need 2-d");
    const size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(idx.size() * cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows) fail(Err::contract, "take_rows: index out of range");
        std::copy_n(a.values().data() + idx[i] * cols, cols, out.data() + i * cols);
    }
    std::vector<size_t> ix(idx.begin(), idx.end());
    return make_op({idx.size(), cols}, std::move(out), {a}, [ix, cols](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const auto& k = kernels::active();
        for (size_t i = 0; i < ix.size(); ++i)
            k.add_scaled(p.grad.data() + ix[i] * cols, node.grad.data() + i * cols, 1.0, cols);
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) fail(Err::contract, "concat_rows: no inputs");
    const size_t cols = parts[0].cols();
    size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.shape().size() != 2 || p.cols() != cols)
            fail(Err::shape, "concat_rows: column mismatch");
        total += p.rows();
    }
    std::vector<double> out(total * cols);
    size_t at = 0;
    for (const Tensor& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.begin() + at);
        at += p.numel();
    }
    std::vector<Tensor> ps(parts.begin(), parts.end());
    return make_op({total, cols}, std::move(out), ps, [](Node& node) {
        size_t at = 0;
        for (auto& parent : node.parents) {
            if (parent->requires_grad) {
                parent->ensure_grad();
                kernels::active().add_scaled(parent->grad.data(), node.grad.data() + at, 1.0,
                                             parent->value.size());
            }
            at += parent->value.size();
        }
    });
}

Tensor sort_columns(const Tensor& a) {
    if (a.shape().size() != 2) fail(Err::shape, "sort_columns: need 2-d");
    const size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(rows * cols);
    std::vector<size_t> perm(rows * cols); // perm[c * rows + r] = source row of sorted position r
    const auto& x = a.values();
    std::vector<size_t> order(rows);
    for (size_t c = 0; c < cols; ++c) {
        for (size_t r = 0; r < rows; ++r) order[r] = r;
        std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
            double vi = x[i * cols + c], vj = x[j * cols + c];
            if (vi != vj) return vi < vj;
            return i < j; // deterministic tie order
        });
        for (size_t r = 0; r < rows; ++r) {
            out[r * cols + c] = x[order[r] * cols + c];
            perm[c * rows + r] = order[r];
        }
    }
    return make_op({rows, cols}, std::move(out), {a},
                   [perm = std::move(perm), rows, cols](Node& node) {
        Node& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t c = 0; c < cols; ++c)
            for (size_t r = 0; r < rows; ++r)
                p.grad[perm[c * rows + r] * cols + c] += node.grad[r * cols + c];
    });
}

// ---- fused blocks ----------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
    if (x.shape().size() != 2) fail(Err::shape, "layer_norm: need 2-d input");
    const size_t rows = x.rows(), d = x.cols();
    if (gain.numel() != d || offset.numel() != d)
        fail(Err::shape, "layer_norm: gain/offset dim mismatch");
    std::vector<double> out(rows * d);
    std::vector<double> xhat(rows * d);
    std::vector<double> inv_std(rows);
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = offset.values();
    for (size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double m = 0.0;
        for (size_t j = 0; j < d; ++j) m += row[j];
        m /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double c = row[j] - m;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (size_t j = 0; j < d; ++j) {
            double h = (row[j] - m) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return make_op({rows, d}, std::move(out), {x, gain, offset},
                   [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& node) {
        Node& px = *node.parents[0];
        Node& pg = *node.parents[1];
        Node& pb = *node.parents[2];
        const auto& gy = node.grad;
        if (pg.requires_grad) {
            pg.ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < d; ++j) pg.grad[j] += gy[r * d + j] * xhat[r * d + j];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < d; ++j) pb.grad[j] += gy[r * d + j];
        }
        if (px.requires_grad) {
            px.ensure_grad();
            const auto& gv = pg.value;
            for (size_t r = 0; r < rows; ++r) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    double g = gy[r * d + j] * gv[j];
                    sum_g += g;
                    sum_gx += g * xhat[r * d + j];
                }
                double mg = sum_g / static_cast<double>(d);
                double mgx = sum_gx / static_cast<double>(d);
                for (size_t j = 0; j < d; ++j) {
                    double g = gy[r * d + j] * gv[j];
                    px.grad[r * d + j] += (g - mg - xhat[r * d + j] * mgx) * inv_std[r];
                }
            }
        }
    });
}

Tensor rbf_mean(const Tensor& u, const Tensor& v, double sigma) {
    if (u.shape().size() != 2 || v.shape().size() != 2 || u.cols() != v.cols())
        fail(Err::shape, "rbf_mean: " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
    if (!(sigma > 0.0)) fail(Err::config, "rbf_mean: bandwidth must be positive");
    const size_t n = u.rows(), m = v.rows(), d = u.cols();
    if (n == 0 || m == 0) fail(Err::contract, "rbf_mean: empty cloud");
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const auto& uv = u.values();
    const auto& vv = v.values();
    // V^T so the j axis is contiguous in the accumulation kernel
    std::vector<double> vt(d * m);
    for (size_t j = 0; j < m; ++j)
        for (size_t c = 0; c < d; ++c) vt[c * m + j] = vv[j * d + c];
    std::vector<double> kmat(n * m); // kernel values, reused in the pullback
    const auto& ker = kernels::active();
    std::vector<double> row(m);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (size_t c = 0; c < d; ++c) ker.accum_sqdiff(row.data(), uv[i * d + c], vt.data() + c * m, m);
        for (size_t j = 0; j < m; ++j) {
            double kv = std::exp(-row[j] * inv2s2);
            kmat[i * m + j] = kv;
            acc += kv;
        }
    }
    const double denom = static_cast<double>(n) * static_cast<double>(m);
    return make_op({1}, {acc / denom}, {u, v},
                   [n, m, d, inv2s2, denom, kmat = std::move(kmat)](Node& node) {
        Node& pu = *node.parents[0];
        Node& pv = *node.parents[1];
        const double g = node.grad[0] / denom;
        const double c2 = 2.0 * inv2s2; // 1 / sigma^2
        if (pu.requires_grad) pu.ensure_grad();
        if (pv.requires_grad) pv.ensure_grad();
        if (!pu.requires_grad && !pv.requires_grad) return;
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < m; ++j) {
                double w = g * kmat[i * m + j] * c2;
                if (w == 0.0) continue;
                const double* ui = pu.value.data() + i * d;
                const double* vj = pv.value.data() + j * d;
                if (pu.requires_grad) {
                    double* gu = pu.grad.data() + i * d;
                    for (size_t c = 0; c < d; ++c) gu[c] += w * (vj[c] - ui[c]);
                }
                if (pv.requires_grad) {
                    double* gv = pv.grad.data() + j * d;
                    for (size_t c = 0; c < d; ++c) gv[c] += w * (ui[c] - vj[c]);
                }
            }
        }
    });
}

// ---- backward ---------------------------------------------------------

void backward(const Tensor& loss) {
    const Node& check = deref(loss, "backward");
    if (check.value.size() != 1)
        fail(Err::contract,
             "backward: loss must be scalar, got " + shape_str(check.shape));

    // Iterative post-order DFS: parents first, node after.
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    Node* root = loss.node().get();
    if (seen.insert(root).second) stack.push_back({root, 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    // Fresh adjoints for intermediates; leaves keep accumulating.
    for (Node* n : topo) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    }
    root->ensure_grad();
    root->grad[0] += 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
    if (!(eps > 0.0)) fail(Err::config, "finite_diff_grad: eps must be positive");
    Tensor probe = x.detach();
    auto& v = probe.values();
    std::vector<double> g(v.size());
    NoGradGuard ng;
    for (size_t i = 0; i < v.size(); ++i) {
        const double orig = v[i];
        v[i] = orig + eps;
        double fp = f(probe);
        v[i] = orig - eps;
        double fm = f(probe);
        v[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return Tensor::from_data(x.shape(), std::move(g));
}

} // namespace otpel
