#pragma once

#include "otpel/rng.hpp"
#include "otpel/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace otpel::nn {

struct Linear {
    Tensor weight; // [in x out]
    Tensor bias;   // [out]

    static Linear init(size_t in, size_t out, rng::Stream& rs);
    static Linear zeros(size_t in, size_t out);
    // x [n x in] -> x W + b broadcast per row
    Tensor forward(const Tensor& x) const;
    size_t in_dim() const { return weight.rows(); }
    size_t out_dim() const { return weight.cols(); }
};

struct LayerNorm {
    Tensor gain;   // [dim]
    Tensor offset; // [dim]
    double eps = 1e-5;

    static LayerNorm init(size_t dim, double eps = 1e-5);
    Tensor forward(const Tensor& x) const;
};

struct Counts {
    size_t total = 0;
    size_t trainable = 0;
    double ratio = 0.0; // trainable / total, 0 when empty
};

// Named parameter store separating frozen backbone weights from trainable
// adaptation weights. Freezing acts at two levels: the entry leaves the
// optimizer set and the tensor stops requiring grad, so neither a stray
// optimizer nor a stray backward call can move a frozen weight.
class ParamRegistry {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool frozen = false;
    };

    Tensor add(const std::string& name, Tensor t, bool frozen = false);
    bool contains(const std::string& name) const;
    Tensor get(const std::string& name) const;

    // Marks every entry whose name starts with `prefix`; errors when nothing
    // matches (a silent no-op would hide typos in freeze scopes).
    void freeze(const std::string& prefix);
    void set_trainable(const std::string& prefix, bool trainable);

    Counts counts() const; // element counts, not entry counts
    std::vector<Tensor> trainable_tensors() const;
    const std::vector<Entry>& entries() const { return order_; }

private:
    std::vector<Entry> order_; // insertion order; serialization follows it
    std::map<std::string, size_t> index_;
};

// Adam over an explicit trainable set. Bias-corrected; state is per tensor.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.98,
                  double eps = 1e-9);
    void zero_grad();
    void step(double lr);
    size_t steps_taken() const { return t_; }

private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double beta1_, beta2_, eps_;
    size_t t_ = 0;
};

// Linear warmup to `peak`, then inverse-sqrt decay (step is 0-based).
double lr_schedule(int step, double peak, int warmup_steps);

} // namespace otpel::nn
