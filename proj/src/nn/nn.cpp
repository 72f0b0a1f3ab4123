#include "diffender/nn.hpp"

#include "diffender/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace diffender::nn {

Param::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t total = 1;
    for (int d : shape) total *= static_cast<std::size_t>(d);
    value.assign(total, 0.0);
}

DoubleVec& GradMap::of(const Param& p) {
    auto& g = g_[&p];
    if (g.size() != p.size()) g.assign(p.size(), 0.0);
    return g;
}

const DoubleVec* GradMap::find(const Param& p) const {
    auto it = g_.find(&p);
    return it == g_.end() ? nullptr : &it->second;
}

void GradMap::scale(double s) {
    for (auto& [_, g] : g_)
        for (double& v : g) v *= s;
}

namespace {

using MapM = Eigen::Map<RowMatrix>;
using CMapM = Eigen::Map<const RowMatrix>;

void im2col(const Tensor& x, int dil, RowMatrix& cols) {
    const int C = x.channels(), H = x.height(), W = x.width();
    cols.resize(static_cast<Eigen::Index>(C) * 9, static_cast<Eigen::Index>(H) * W);
    for (int c = 0; c < C; ++c) {
        const double* src = x.data() + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < 3; ++ky) {
            const int dy = (ky - 1) * dil;
            for (int kx = 0; kx < 3; ++kx) {
                const int dx = (kx - 1) * dil;
                double* row = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * H * W;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    double* dst = row + static_cast<std::size_t>(y) * W;
                    if (sy < 0 || sy >= H) {
                        std::fill(dst, dst + W, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(sy) * W;
                    const int x0 = std::min(W, std::max(0, -dx));
                    const int x1 = std::max(x0, std::min(W, W - dx));
                    std::fill(dst, dst + x0, 0.0);
                    for (int xx = x0; xx < x1; ++xx) dst[xx] = srow[xx + dx];
                    std::fill(dst + x1, dst + W, 0.0);
                }
            }
        }
    }
}

Tensor col2im(const RowMatrix& dcols, int C, int H, int W, int dil) {
    Tensor dx(C, H, W, 0.0);
    for (int c = 0; c < C; ++c) {
        double* dst = dx.data() + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < 3; ++ky) {
            const int dy = (ky - 1) * dil;
            for (int kx = 0; kx < 3; ++kx) {
                const int ddx = (kx - 1) * dil;
                const double* row = dcols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * H * W;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const double* src = row + static_cast<std::size_t>(y) * W;
                    double* drow = dst + static_cast<std::size_t>(sy) * W;
                    const int x0 = std::max(0, -ddx), x1 = std::min(W, W - ddx);
                    for (int xx = x0; xx < x1; ++xx) drow[xx + ddx] += src[xx];
                }
            }
        }
    }
    return dx;
}

void fill_normal(DoubleVec& v, RngStream& rng, double std) {
    for (double& x : v) x = rng.normal() * std;
}

}  // namespace

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int dilation)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      dilation_(dilation),
      weight_(name + ".weight", {out_ch, in_ch * 9}),
      bias_(name + ".bias", {out_ch}) {
    if (in_ch < 1 || out_ch < 1 || dilation < 1) throw ParamError("invalid conv geometry");
}

void Conv2d::init(RngStream& rng, double gain) {
    fill_normal(weight_.value, rng, gain * std::sqrt(2.0 / (in_ch_ * 9.0)));
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, RowMatrix* cols) const {
    if (x.channels() != in_ch_) throw ShapeError("conv input channel mismatch");
    RowMatrix local;
    RowMatrix& c = cols ? *cols : local;
    im2col(x, dilation_, c);
    Tensor y(out_ch_, x.height(), x.width());
    CMapM w(weight_.value.data(), out_ch_, in_ch_ * 9);
    MapM ym = y.matrix();
    ym.noalias() = w * c;
    for (int o = 0; o < out_ch_; ++o) ym.row(o).array() += bias_.value[o];
    return y;
}

Tensor Conv2d::backward(const Tensor& gy, const RowMatrix& cols, int in_h, int in_w, GradMap* grads,
                        bool want_dx) const {
    auto gym = gy.matrix();
    if (grads) {
        auto& gw = grads->of(weight_);
        auto& gb = grads->of(bias_);
        MapM gwm(gw.data(), out_ch_, in_ch_ * 9);
        gwm.noalias() += gym * cols.transpose();
        for (int o = 0; o < out_ch_; ++o) gb[o] += gym.row(o).sum();
    }
    if (!want_dx) return {};
    CMapM w(weight_.value.data(), out_ch_, in_ch_ * 9);
    RowMatrix dcols = w.transpose() * gym;
    return col2im(dcols, in_ch_, in_h, in_w, dilation_);
}

Linear::Linear(std::string name, int in_dim, int out_dim)
    : in_(in_dim), out_(out_dim), weight_(name + ".weight", {out_dim, in_dim}), bias_(name + ".bias", {out_dim}) {}

void Linear::init(RngStream& rng, double gain) {
    fill_normal(weight_.value, rng, gain * std::sqrt(1.0 / in_));
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Vector Linear::forward(const Vector& x) const {
    if (x.size() != in_) throw ShapeError("linear input size mismatch");
    CMapM w(weight_.value.data(), out_, in_);
    Vector y = w * x;
    for (int i = 0; i < out_; ++i) y[i] += bias_.value[i];
    return y;
}

Vector Linear::backward(const Vector& x, const Vector& gy, GradMap* grads) const {
    if (grads) {
        auto& gw = grads->of(weight_);
        auto& gb = grads->of(bias_);
        MapM gwm(gw.data(), out_, in_);
        gwm.noalias() += gy * x.transpose();
        for (int i = 0; i < out_; ++i) gb[i] += gy[i];
    }
    CMapM w(weight_.value.data(), out_, in_);
    return w.transpose() * gy;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

void silu_inplace(Tensor& t) {
    for (double& v : t.values()) v = silu(v);
}

void relu_inplace(Tensor& t) {
    for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

Vector silu(const Vector& v) { return v.unaryExpr([](double x) { return silu(x); }); }

Tensor avg_pool2(const Tensor& x) {
    const int H2 = x.height() / 2, W2 = x.width() / 2;
    Tensor y(x.channels(), H2, W2);
    for (int c = 0; c < x.channels(); ++c)
        for (int yy = 0; yy < H2; ++yy)
            for (int xx = 0; xx < W2; ++xx)
                y(c, yy, xx) = 0.25 * (x(c, 2 * yy, 2 * xx) + x(c, 2 * yy, 2 * xx + 1) + x(c, 2 * yy + 1, 2 * xx) +
                                       x(c, 2 * yy + 1, 2 * xx + 1));
    return y;
}

Tensor avg_pool2_backward(const Tensor& gy, int in_h, int in_w) {
    Tensor gx(gy.channels(), in_h, in_w, 0.0);
    for (int c = 0; c < gy.channels(); ++c)
        for (int yy = 0; yy < gy.height(); ++yy)
            for (int xx = 0; xx < gy.width(); ++xx) {
                const double g = 0.25 * gy(c, yy, xx);
                gx(c, 2 * yy, 2 * xx) += g;
                gx(c, 2 * yy, 2 * xx + 1) += g;
                gx(c, 2 * yy + 1, 2 * xx) += g;
                gx(c, 2 * yy + 1, 2 * xx + 1) += g;
            }
    return gx;
}

Vector global_avg_pool(const Tensor& x) {
    return x.matrix().rowwise().mean();
}

Tensor global_avg_pool_backward(const Vector& g, int channels, int h, int w) {
    Tensor gx(channels, h, w);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int c = 0; c < channels; ++c) gx.matrix().row(c).setConstant(g[c] * inv);
    return gx;
}

Vector sinusoidal_embedding(double pos, int dim) {
    Vector e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(2.0, static_cast<double>(i)) * 3.14159265358979323846;
        e[2 * i] = std::sin(freq * pos);
        e[2 * i + 1] = std::cos(freq * pos);
    }
    if (dim % 2) e[dim - 1] = pos;
    return e;
}

Adam::Adam(std::vector<Param*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
    }
}

void Adam::step(const GradMap& grads) {
    ++t_;
    double clip_scale = 1.0;
    if (opts_.grad_clip > 0.0) {
        double sq = 0.0;
        for (auto* p : params_)
            if (const auto* g = grads.find(*p))
                for (double v : *g) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > opts_.grad_clip) clip_scale = opts_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto* g = grads.find(*params_[k]);
        if (!g) continue;
        auto& val = params_[k]->value;
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double gi = (*g)[i] * clip_scale;
            m_[k][i] = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * gi;
            v_[k][i] = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * gi * gi;
            val[i] -= opts_.lr * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + opts_.eps);
        }
    }
}

}  // namespace diffender::nn
