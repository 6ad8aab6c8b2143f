#ifndef LBFTI_NN_LAYERS_HPP_
#define LBFTI_NN_LAYERS_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lbfti/core/rng.hpp"
#include "lbfti/core/tensor.hpp"
#include "lbfti/errors.hpp"

namespace lbfti::nn {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

/// One learnable (or tracked) tensor. `is_state` marks running statistics:
/// serialized with checkpoints but never touched by the optimizer.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool is_state = false;

    Param() = default;
    Param(std::string n, std::vector<int> shape, bool state = false)
        : name(std::move(n)), value(shape), grad(shape), is_state(state) {}

    void zero_grad() { grad.zero(); }
};

/// Anything that owns parameters. forward/backward cache activations for a
/// single in-flight pass; backward accumulates into Param::grad.
class Module {
public:
    virtual ~Module() = default;
    virtual void collect(std::vector<Param*>& out) = 0;

    std::vector<Param*> params() {
        std::vector<Param*> ps;
        collect(ps);
        return ps;
    }

    void zero_grad() {
        for (Param* p : params()) p->zero_grad();
    }

    int64_t param_count() {
        int64_t n = 0;
        for (Param* p : params())
            if (!p->is_state) n += p->value.size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// im2col / col2im, the backbone of conv and deconv in both directions.
// cols has shape {C*k*k, Ho*Wo}; row index r = (c*k + ki)*k + kj.
// ---------------------------------------------------------------------------

inline int conv_out_size(int in, int k, int s, int p) {
    int o = (in + 2 * p - k) / s + 1;
    if (o <= 0) throw DimensionError("convolution output size would be non-positive");
    return o;
}

inline void im2col(const Tensor& x, int k, int s, int p, Tensor& cols) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Ho = conv_out_size(H, k, s, p), Wo = conv_out_size(W, k, s, p);
    cols = Tensor({C * k * k, Ho * Wo});
    float* dst = cols.data();
    const float* src = x.data();
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* row = dst + static_cast<int64_t>((c * k + ki) * k + kj) * Ho * Wo;
                for (int i = 0; i < Ho; ++i) {
                    const int yi = i * s - p + ki;
                    if (yi < 0 || yi >= H) {
                        std::fill(row + i * Wo, row + (i + 1) * Wo, 0.0f);
                        continue;
                    }
                    const float* srow = src + (static_cast<int64_t>(c) * H + yi) * W;
                    for (int j = 0; j < Wo; ++j) {
                        const int xj = j * s - p + kj;
                        row[i * Wo + j] = (xj < 0 || xj >= W) ? 0.0f : srow[xj];
                    }
                }
            }
        }
    }
}

/// Scatter-add of cols back onto an image of shape {C,H,W}.
inline void col2im(const Tensor& cols, int C, int H, int W, int k, int s, int p, Tensor& x) {
    const int Ho = conv_out_size(H, k, s, p), Wo = conv_out_size(W, k, s, p);
    x = Tensor({C, H, W});
    const float* src = cols.data();
    float* dst = x.data();
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* row = src + static_cast<int64_t>((c * k + ki) * k + kj) * Ho * Wo;
                for (int i = 0; i < Ho; ++i) {
                    const int yi = i * s - p + ki;
                    if (yi < 0 || yi >= H) continue;
                    float* drow = dst + (static_cast<int64_t>(c) * H + yi) * W;
                    for (int j = 0; j < Wo; ++j) {
                        const int xj = j * s - p + kj;
                        if (xj >= 0 && xj < W) drow[xj] += row[i * Wo + j];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

class Conv2d : public Module {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
           double init_gain = 2.0)
        : w_(name + ".w", {out_ch, in_ch, k, k}),
          b_(name + ".b", {out_ch}),
          in_ch_(in_ch), out_ch_(out_ch), k_(k), s_(stride), p_(pad) {
        const double std = std::sqrt(init_gain / (in_ch * k * k));
        for (int64_t i = 0; i < w_.value.size(); ++i)
            w_.value[i] = static_cast<float>(rng.normal(0.0, std));
        for (int64_t i = 0; i < b_.value.size(); ++i)
            b_.value[i] = static_cast<float>(rng.normal(0.0, 0.01));
    }

    Tensor forward(const Tensor& x, bool /*training*/ = false) {
        if (x.rank() != 3 || x.dim(0) != in_ch_)
            throw DimensionError("Conv2d " + w_.name + ": expected {" + std::to_string(in_ch_) +
                                 ",H,W}, got " + x.shape_str());
        in_h_ = x.dim(1);
        in_w_ = x.dim(2);
        im2col(x, k_, s_, p_, cols_);
        const int ho = conv_out_size(in_h_, k_, s_, p_), wo = conv_out_size(in_w_, k_, s_, p_);
        Tensor y({out_ch_, ho, wo});
        CMapM wm(w_.value.data(), out_ch_, in_ch_ * k_ * k_);
        CMapM cm(cols_.data(), in_ch_ * k_ * k_, ho * wo);
        MapM ym(y.data(), out_ch_, ho * wo);
        ym.noalias() = wm * cm;
        for (int c = 0; c < out_ch_; ++c) ym.row(c).array() += b_.value[c];
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const int ho = gy.dim(1), wo = gy.dim(2);
        CMapM gym(gy.data(), out_ch_, ho * wo);
        CMapM cm(cols_.data(), in_ch_ * k_ * k_, ho * wo);
        MapM gwm(w_.grad.data(), out_ch_, in_ch_ * k_ * k_);
        gwm.noalias() += gym * cm.transpose();
        for (int c = 0; c < out_ch_; ++c) b_.grad[c] += gym.row(c).sum();
        Tensor gcols({in_ch_ * k_ * k_, ho * wo});
        MapM gcm(gcols.data(), in_ch_ * k_ * k_, ho * wo);
        CMapM wm(w_.value.data(), out_ch_, in_ch_ * k_ * k_);
        gcm.noalias() = wm.transpose() * gym;
        Tensor gx;
        col2im(gcols, in_ch_, in_h_, in_w_, k_, s_, p_, gx);
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

    int out_channels() const { return out_ch_; }

private:
    Param w_, b_;
    int in_ch_, out_ch_, k_, s_, p_;
    int in_h_ = 0, in_w_ = 0;
    Tensor cols_;
};

/// Transposed convolution. Weight layout {in_ch, out_ch, k, k}; the forward
/// pass is the gradient path of a Conv2d with the same geometry, so output
/// size is (H-1)*s - 2p + k. k=4, s=2, p=1 doubles the spatial size exactly.
class ConvTranspose2d : public Module {
public:
    ConvTranspose2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
                    double init_gain = 2.0)
        : w_(name + ".w", {in_ch, out_ch, k, k}),
          b_(name + ".b", {out_ch}),
          in_ch_(in_ch), out_ch_(out_ch), k_(k), s_(stride), p_(pad) {
        const double std = std::sqrt(init_gain / (in_ch * k * k));
        for (int64_t i = 0; i < w_.value.size(); ++i)
            w_.value[i] = static_cast<float>(rng.normal(0.0, std));
        for (int64_t i = 0; i < b_.value.size(); ++i)
            b_.value[i] = static_cast<float>(rng.normal(0.0, 0.01));
    }

    int out_size(int in) const { return (in - 1) * s_ - 2 * p_ + k_; }

    Tensor forward(const Tensor& x, bool /*training*/ = false) {
        if (x.rank() != 3 || x.dim(0) != in_ch_)
            throw DimensionError("ConvTranspose2d " + w_.name + ": bad input " + x.shape_str());
        in_h_ = x.dim(1);
        in_w_ = x.dim(2);
        x_ = x;
        const int ho = out_size(in_h_), wo = out_size(in_w_);
        Tensor cols({out_ch_ * k_ * k_, in_h_ * in_w_});
        CMapM wm(w_.value.data(), in_ch_, out_ch_ * k_ * k_);
        CMapM xm(x.data(), in_ch_, in_h_ * in_w_);
        MapM cm(cols.data(), out_ch_ * k_ * k_, in_h_ * in_w_);
        cm.noalias() = wm.transpose() * xm;
        Tensor y;
        col2im(cols, out_ch_, ho, wo, k_, s_, p_, y);
        for (int c = 0; c < out_ch_; ++c) {
            float* yc = y.data() + static_cast<int64_t>(c) * ho * wo;
            for (int i = 0; i < ho * wo; ++i) yc[i] += b_.value[c];
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        Tensor gcols;
        im2col(gy, k_, s_, p_, gcols);  // {out_ch*k*k, in_h*in_w}
        CMapM gcm(gcols.data(), out_ch_ * k_ * k_, in_h_ * in_w_);
        CMapM xm(x_.data(), in_ch_, in_h_ * in_w_);
        MapM gwm(w_.grad.data(), in_ch_, out_ch_ * k_ * k_);
        gwm.noalias() += xm * gcm.transpose();
        const int ho = gy.dim(1), wo = gy.dim(2);
        for (int c = 0; c < out_ch_; ++c) {
            const float* gc = gy.data() + static_cast<int64_t>(c) * ho * wo;
            double s = 0.0;
            for (int i = 0; i < ho * wo; ++i) s += gc[i];
            b_.grad[c] += static_cast<float>(s);
        }
        Tensor gx({in_ch_, in_h_, in_w_});
        CMapM wm(w_.value.data(), in_ch_, out_ch_ * k_ * k_);
        MapM gxm(gx.data(), in_ch_, in_h_ * in_w_);
        gxm.noalias() = wm * gcm;
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

private:
    Param w_, b_;
    int in_ch_, out_ch_, k_, s_, p_;
    int in_h_ = 0, in_w_ = 0;
    Tensor x_;
};

/// Spatial batch normalization over a {C,H,W} tensor: statistics are taken
/// per channel over the H*W positions of the current input. Training mode
/// updates running statistics; eval mode reads them.
class BatchNorm2d : public Module {
public:
    BatchNorm2d(std::string name, int ch, float momentum = 0.1f, float eps = 1e-5f)
        : gamma_(name + ".gamma", {ch}),
          beta_(name + ".beta", {ch}),
          run_mean_(name + ".run_mean", {ch}, true),
          run_var_(name + ".run_var", {ch}, true),
          ch_(ch), momentum_(momentum), eps_(eps) {
        gamma_.value.fill(1.0f);
        run_var_.value.fill(1.0f);
    }

    Tensor forward(const Tensor& x, bool training) {
        if (x.rank() != 3 || x.dim(0) != ch_)
            throw DimensionError("BatchNorm2d " + gamma_.name + ": bad input " + x.shape_str());
        const int H = x.dim(1), W = x.dim(2);
        const int64_t n = static_cast<int64_t>(H) * W;
        train_mode_ = training;
        mean_ = Tensor({ch_});
        inv_std_ = Tensor({ch_});
        xhat_ = Tensor({ch_, H, W});
        Tensor y({ch_, H, W});
        for (int c = 0; c < ch_; ++c) {
            const float* xc = x.data() + c * n;
            double mu, var;
            if (training) {
                double s = 0.0;
                for (int64_t i = 0; i < n; ++i) s += xc[i];
                mu = s / static_cast<double>(n);
                double ss = 0.0;
                for (int64_t i = 0; i < n; ++i) {
                    const double d = xc[i] - mu;
                    ss += d * d;
                }
                var = ss / static_cast<double>(n);
                run_mean_.value[c] = static_cast<float>((1.0 - momentum_) * run_mean_.value[c] + momentum_ * mu);
                run_var_.value[c] = static_cast<float>((1.0 - momentum_) * run_var_.value[c] + momentum_ * var);
            } else {
                mu = run_mean_.value[c];
                var = run_var_.value[c];
            }
            const float istd = static_cast<float>(1.0 / std::sqrt(var + eps_));
            mean_[c] = static_cast<float>(mu);
            inv_std_[c] = istd;
            const float g = gamma_.value[c], b = beta_.value[c], m = static_cast<float>(mu);
            float* hc = xhat_.data() + c * n;
            float* yc = y.data() + c * n;
            for (int64_t i = 0; i < n; ++i) {
                hc[i] = (xc[i] - m) * istd;
                yc[i] = g * hc[i] + b;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const int H = gy.dim(1), W = gy.dim(2);
        const int64_t n = static_cast<int64_t>(H) * W;
        Tensor gx({ch_, H, W});
        for (int c = 0; c < ch_; ++c) {
            const float* gc = gy.data() + c * n;
            const float* hc = xhat_.data() + c * n;
            double sum_gy = 0.0, sum_gyh = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                sum_gy += gc[i];
                sum_gyh += static_cast<double>(gc[i]) * hc[i];
            }
            beta_.grad[c] += static_cast<float>(sum_gy);
            gamma_.grad[c] += static_cast<float>(sum_gyh);
            const float g = gamma_.value[c], istd = inv_std_[c];
            float* xc = gx.data() + c * n;
            if (train_mode_) {
                const float mg = static_cast<float>(sum_gy / static_cast<double>(n));
                const float mgh = static_cast<float>(sum_gyh / static_cast<double>(n));
                for (int64_t i = 0; i < n; ++i)
                    xc[i] = g * istd * (gc[i] - mg - hc[i] * mgh);
            } else {
                for (int64_t i = 0; i < n; ++i) xc[i] = g * istd * gc[i];
            }
        }
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
        out.push_back(&run_mean_);
        out.push_back(&run_var_);
    }

private:
    Param gamma_, beta_, run_mean_, run_var_;
    int ch_;
    float momentum_, eps_;
    bool train_mode_ = false;
    Tensor mean_, inv_std_, xhat_;
};

class Linear : public Module {
public:
    Linear(std::string name, int in_dim, int out_dim, Rng& rng, double init_gain = 2.0)
        : w_(name + ".w", {out_dim, in_dim}), b_(name + ".b", {out_dim}),
          in_(in_dim), out_(out_dim) {
        const double std = std::sqrt(init_gain / in_dim);
        for (int64_t i = 0; i < w_.value.size(); ++i)
            w_.value[i] = static_cast<float>(rng.normal(0.0, std));
        for (int64_t i = 0; i < b_.value.size(); ++i)
            b_.value[i] = static_cast<float>(rng.normal(0.0, 0.01));
    }

    Tensor forward(const Tensor& x, bool /*training*/ = false) {
        if (x.size() != in_)
            throw DimensionError("Linear " + w_.name + ": expected " + std::to_string(in_) +
                                 " inputs, got " + x.shape_str());
        x_ = x;
        Tensor y({out_});
        CMapM wm(w_.value.data(), out_, in_);
        Eigen::Map<const Eigen::VectorXf> xv(x.data(), in_);
        Eigen::Map<Eigen::VectorXf> yv(y.data(), out_);
        yv.noalias() = wm * xv;
        Eigen::Map<const Eigen::VectorXf> bv(b_.value.data(), out_);
        yv += bv;
        return y;
    }

    Tensor backward(const Tensor& gy) {
        MapM gwm(w_.grad.data(), out_, in_);
        Eigen::Map<const Eigen::VectorXf> gyv(gy.data(), out_);
        Eigen::Map<const Eigen::VectorXf> xv(x_.data(), in_);
        gwm.noalias() += gyv * xv.transpose();
        Eigen::Map<Eigen::VectorXf> gbv(b_.grad.data(), out_);
        gbv += gyv;
        Tensor gx({in_});
        CMapM wm(w_.value.data(), out_, in_);
        Eigen::Map<Eigen::VectorXf> gxv(gx.data(), in_);
        gxv.noalias() = wm.transpose() * gyv;
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

private:
    Param w_, b_;
    int in_, out_;
    Tensor x_;
};

class ReLU {
public:
    Tensor forward(const Tensor& x) {
        mask_ = Tensor(x.shape());
        Tensor y(x.shape());
        for (int64_t i = 0; i < x.size(); ++i) {
            const bool pos = x[i] > 0.0f;
            mask_[i] = pos ? 1.0f : 0.0f;
            y[i] = pos ? x[i] : 0.0f;
        }
        return y;
    }
    Tensor backward(const Tensor& gy) {
        Tensor gx(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * mask_[i];
        return gx;
    }

private:
    Tensor mask_;
};

class Tanh {
public:
    Tensor forward(const Tensor& x) {
        y_ = Tensor(x.shape());
        for (int64_t i = 0; i < x.size(); ++i) y_[i] = std::tanh(x[i]);
        return y_;
    }
    Tensor backward(const Tensor& gy) {
        Tensor gx(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * (1.0f - y_[i] * y_[i]);
        return gx;
    }

private:
    Tensor y_;
};

class Sigmoid {
public:
    Tensor forward(const Tensor& x) {
        y_ = Tensor(x.shape());
        for (int64_t i = 0; i < x.size(); ++i) y_[i] = 1.0f / (1.0f + std::exp(-x[i]));
        return y_;
    }
    Tensor backward(const Tensor& gy) {
        Tensor gx(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * y_[i] * (1.0f - y_[i]);
        return gx;
    }

private:
    Tensor y_;
};

/// 2x nearest-neighbor upsampling.
class UpsampleNearest2 {
public:
    Tensor forward(const Tensor& x) {
        const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
        in_h_ = H;
        in_w_ = W;
        Tensor y({C, 2 * H, 2 * W});
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < 2 * H; ++i)
                for (int j = 0; j < 2 * W; ++j)
                    y.at(c, i, j) = x.at(c, i / 2, j / 2);
        return y;
    }
    Tensor backward(const Tensor& gy) {
        const int C = gy.dim(0);
        Tensor gx({C, in_h_, in_w_});
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < 2 * in_h_; ++i)
                for (int j = 0; j < 2 * in_w_; ++j)
                    gx.at(c, i / 2, j / 2) += gy.at(c, i, j);
        return gx;
    }

private:
    int in_h_ = 0, in_w_ = 0;
};

/// {C,H,W} -> {C} mean pool. Makes downstream heads tolerant of the input
/// resolution.
class GlobalAvgPool {
public:
    Tensor forward(const Tensor& x) {
        const int C = x.dim(0);
        h_ = x.dim(1);
        w_ = x.dim(2);
        const int64_t n = static_cast<int64_t>(h_) * w_;
        Tensor y({C});
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const float* xc = x.data() + c * n;
            for (int64_t i = 0; i < n; ++i) s += xc[i];
            y[c] = static_cast<float>(s / static_cast<double>(n));
        }
        return y;
    }
    Tensor backward(const Tensor& gy) {
        const int C = gy.dim(0);
        const int64_t n = static_cast<int64_t>(h_) * w_;
        Tensor gx({C, h_, w_});
        for (int c = 0; c < C; ++c) {
            const float g = gy[c] / static_cast<float>(n);
            float* xc = gx.data() + c * n;
            for (int64_t i = 0; i < n; ++i) xc[i] = g;
        }
        return gx;
    }

private:
    int h_ = 0, w_ = 0;
};

/// y = x / ||x||_2 on a vector.
class L2Normalize {
public:
    Tensor forward(const Tensor& x) {
        norm_ = x.norm2();
        if (norm_ < 1e-12) throw NumericError("L2Normalize: zero-norm input");
        y_ = x;
        y_.scale_(static_cast<float>(1.0 / norm_));
        return y_;
    }
    Tensor backward(const Tensor& gy) {
        double dot = 0.0;
        for (int64_t i = 0; i < gy.size(); ++i) dot += static_cast<double>(gy[i]) * y_[i];
        Tensor gx(gy.shape());
        const float inv = static_cast<float>(1.0 / norm_);
        for (int64_t i = 0; i < gy.size(); ++i)
            gx[i] = (gy[i] - static_cast<float>(dot) * y_[i]) * inv;
        return gx;
    }

private:
    double norm_ = 1.0;
    Tensor y_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam over a fixed parameter set. State tensors (is_state) are skipped.
class Adam {
public:
    Adam() = default;
    explicit Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void attach(const std::vector<Param*>& ps) {
        params_ = ps;
        m_.clear();
        v_.clear();
        for (Param* p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
        t_ = 0;
    }

    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }

    /// One update from the accumulated gradients (caller scales/zeroes grads).
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
        const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
        for (size_t k = 0; k < params_.size(); ++k) {
            Param* p = params_[k];
            if (p->is_state) continue;
            Tensor& m = m_[k];
            Tensor& v = v_[k];
            for (int64_t i = 0; i < p->value.size(); ++i) {
                const float g = p->grad[i];
                m[i] = beta1_ * m[i] + (1.0f - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0f - beta2_) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p->value[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    float lr_ = 1e-3f, beta1_ = 0.9f, beta2_ = 0.999f, eps_ = 1e-8f;
    std::vector<Param*> params_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

}  // namespace lbfti::nn

#endif  // LBFTI_NN_LAYERS_HPP_
