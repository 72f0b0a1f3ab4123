#pragma once

// Minimal layer library with explicit forward/backward passes. Layers are
// immutable during inference; gradients accumulate into a GradMap owned by
// the caller, so one model can be shared by concurrent readers.

#include "diffender/rng.hpp"
#include "diffender/tensor.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace diffender::nn {

struct Param {
    std::string name;
    std::vector<int> shape;
    DoubleVec value;

    Param() = default;
    Param(std::string n, std::vector<int> s);
    std::size_t size() const { return value.size(); }
};

class GradMap {
public:
    /// Zero-initialized on first access.
    DoubleVec& of(const Param& p);
    const DoubleVec* find(const Param& p) const;
    void clear() { g_.clear(); }
    void scale(double s);

private:
    std::unordered_map<const Param*, DoubleVec> g_;
};

/// 3×3 "same" convolution with dilation, stride 1.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_ch, int out_ch, int dilation = 1);

    void init(RngStream& rng, double gain = 1.0);

    /// `cols` receives the im2col matrix needed by backward().
    Tensor forward(const Tensor& x, RowMatrix* cols) const;
    /// Returns dL/dx when want_dx, else an empty tensor.
    Tensor backward(const Tensor& gy, const RowMatrix& cols, int in_h, int in_w, GradMap* grads,
                    bool want_dx) const;

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    std::vector<Param*> params() { return {&weight_, &bias_}; }
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

private:
    int in_ch_ = 0;
    int out_ch_ = 0;
    int dilation_ = 1;
    Param weight_;  // out × (in·9)
    Param bias_;
};

class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in_dim, int out_dim);

    void init(RngStream& rng, double gain = 1.0);
    Vector forward(const Vector& x) const;
    /// Accumulates parameter grads (when grads != nullptr) and returns dL/dx.
    Vector backward(const Vector& x, const Vector& gy, GradMap* grads) const;

    std::vector<Param*> params() { return {&weight_, &bias_}; }
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }
    int in_dim() const { return in_; }
    int out_dim() const { return out_; }

private:
    int in_ = 0;
    int out_ = 0;
    Param weight_;  // out × in
    Param bias_;
};

double silu(double x);
double silu_grad(double x);

void silu_inplace(Tensor& t);
void relu_inplace(Tensor& t);
Vector silu(const Vector& v);

Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& gy, int in_h, int in_w);

Vector global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Vector& g, int channels, int h, int w);

/// Sinusoidal embedding of a scalar position in [0,1].
Vector sinusoidal_embedding(double pos, int dim);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
};

class Adam {
public:
    Adam(std::vector<Param*> params, AdamOptions opts);
    void step(const GradMap& grads);
    void set_lr(double lr) { opts_.lr = lr; }
    long steps() const { return t_; }

private:
    std::vector<Param*> params_;
    AdamOptions opts_;
    std::vector<DoubleVec> m_, v_;
    long t_ = 0;
};

}  // namespace diffender::nn
