#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace otpel {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // allocated lazily; same length as value when present
    bool requires_grad = false;
    // Inputs this node was computed from. Ownership is child -> parent only,
    // so releasing the loss tensor frees the whole graph.
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

// Dense row-major f64 tensor participating in a dynamically built
// reverse-mode graph. Tensor is a cheap shared handle: copies alias the same
// storage, clone() makes an independent one.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    size_t numel() const;
    size_t rows() const; // dim 0 (scalar -> 1)
    size_t cols() const; // dim 1 (vector -> dim 0)

    std::vector<double>& values();
    const std::vector<double>& values() const;
    double item() const; // single-element tensors

    bool requires_grad() const;
    void set_requires_grad(bool rg); // leaves only
    bool has_grad() const;
    const std::vector<double>& grad() const; // contract error when absent
    void zero_grad();

    Tensor detach() const; // copies values, drops graph and grad flag
    Tensor clone() const;  // independent leaf with same values and grad flag

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Graph recording switch. While a guard is alive, ops compute values but do
// not record parents, and their outputs do not require grad.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// ---- differentiable ops ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
// a: [n x d], v: [d]; adds v to every row
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// input: [frames x ch_in], kernel: [width x ch_in x ch_out], zero same-padding
Tensor conv1d(const Tensor& input, const Tensor& kernel);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor abs_val(const Tensor& a);
// |a|^p elementwise, p >= 1
Tensor abs_pow(const Tensor& a, int p);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// sqrt(max(a, 0)) elementwise; derivative 0 at the clamp
Tensor sqrt_clamped(const Tensor& a);
// table: [vocab x dim]; gathers one row per token
Tensor embed(const Tensor& table, std::span<const int> tokens);
// repeats each row `factor` times (length regulation)
Tensor repeat_rows(const Tensor& a, int factor);
Tensor take_rows(const Tensor& a, std::span<const size_t> idx);
Tensor concat_rows(std::span<const Tensor> parts);
// sorts each column ascending; gradient flows through the permutation
Tensor sort_columns(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps);
// mean over all (i, j) of exp(-|u_i - v_j|^2 / (2 sigma^2)); u: [n x d], v: [m x d]
Tensor rbf_mean(const Tensor& u, const Tensor& v, double sigma);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Accumulates grads on every reachable leaf with requires_grad. Repeated
// calls without zero_grad() add up; intermediate grads are rebuilt per call.
void backward(const Tensor& loss);

// Central-difference gradient oracle: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
// Forward-only; independent of backward().
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps);

} // namespace otpel
