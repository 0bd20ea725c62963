#include "otpel/nn.hpp"

#include "otpel/error.hpp"

#include <algorithm>
#include <cmath>

namespace otpel::nn {

Linear Linear::init(size_t in, size_t out, rng::Stream& rs) {
    double s = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = Tensor::from_data({in, out}, rs.gaussian_vec(in * out, s), true);
    l.bias = Tensor::zeros({out}, true);
    return l;
}

Linear Linear::zeros(size_t in, size_t out) {
    Linear l;
    l.weight = Tensor::zeros({in, out}, true);
    l.bias = Tensor::zeros({out}, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.cols() != weight.rows())
        fail(Err::shape, "linear: input dim " + std::to_string(x.cols()) + " vs weight " +
                             shape_str(weight.shape()));
    return add_rowvec(matmul(x, weight), bias);
}

LayerNorm LayerNorm::init(size_t dim, double eps) {
    LayerNorm ln;
    ln.gain = Tensor::full({dim}, 1.0, true);
    ln.offset = Tensor::zeros({dim}, true);
    ln.eps = eps;
    return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, offset, eps); }

Tensor ParamRegistry::add(const std::string& name, Tensor t, bool frozen) {
    if (index_.count(name)) fail(Err::contract, "registry: duplicate parameter '" + name + "'");
    if (!t.defined()) fail(Err::contract, "registry: undefined tensor for '" + name + "'");
    t.set_requires_grad(!frozen);
    index_[name] = order_.size();
    order_.push_back({name, t, frozen});
    return t;
}

bool ParamRegistry::contains(const std::string& name) const { return index_.count(name) != 0; }

Tensor ParamRegistry::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(Err::contract, "registry: unknown parameter '" + name + "'");
    return order_[it->second].tensor;
}

void ParamRegistry::freeze(const std::string& prefix) { set_trainable(prefix, false); }

void ParamRegistry::set_trainable(const std::string& prefix, bool trainable) {
    size_t hits = 0;
    for (Entry& e : order_) {
        if (e.name.rfind(prefix, 0) == 0) {
            e.frozen = !trainable;
            e.tensor.set_requires_grad(trainable);
            ++hits;
        }
    }
    if (hits == 0) fail(Err::no_match, "no parameter matches prefix '" + prefix + "'");
}

Counts ParamRegistry::counts() const {
    Counts c;
    for (const Entry& e : order_) {
        size_t n = e.tensor.numel();
        c.total += n;
        if (!e.frozen) c.trainable += n;
    }
    c.ratio = c.total == 0 ? 0.0 : static_cast<double>(c.trainable) / static_cast<double>(c.total);
    return c;
}

std::vector<Tensor> ParamRegistry::trainable_tensors() const {
    std::vector<Tensor> out;
    for (const Entry& e : order_)
        if (!e.frozen) out.push_back(e.tensor);
    return out;
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.reserve(params.size());
    for (Tensor& p : params) {
        Slot s;
        s.param = p;
        s.m.assign(p.numel(), 0.0);
        s.v.assign(p.numel(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Slot& s : slots_) {
        if (!s.param.has_grad()) continue; // parameter did not participate this step
        const auto& g = s.param.grad();
        auto& w = s.param.values();
        for (size_t i = 0; i < w.size(); ++i) {
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mh = s.m[i] / bc1;
            double vh = s.v[i] / bc2;
            w[i] -= lr * mh / (std::sqrt(vh) + eps_);
        }
    }
}

double lr_schedule(int step, double peak, int warmup_steps) {
    double s = static_cast<double>(step + 1);
    double w = static_cast<double>(std::max(warmup_steps, 1));
    return peak * std::min(s / w, std::sqrt(w / s));
}

} // namespace otpel::nn
