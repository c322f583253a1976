#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/tensor.hpp"

namespace evtrk {

enum class Mode { train, eval };

struct ParamRef {
    std::string name;
    Tensor4* value = nullptr;
    bool trainable = true;  // false for running statistics
};

// --- initialization ------------------------------------------------------

inline void kaiming_uniform(Tensor4& w, int fan_in, Rng& rng, double negative_slope = 0.01) {
    double gain = std::sqrt(2.0 / (1.0 + negative_slope * negative_slope));
    double bound = gain * std::sqrt(3.0 / fan_in);
    rng.fill_uniform(w, -bound, bound);
}

inline void bias_uniform(Tensor4& b, int fan_in, Rng& rng) {
    double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
    rng.fill_uniform(b, -bound, bound);
}

// Row-orthonormal matrix (rows x cols, rows <= cols) via Gram-Schmidt on a
// random Gaussian draw. Used for recurrent kernels.
inline std::vector<double> orthogonal_rows(int rows, int cols, Rng& rng) {
    std::vector<double> m(static_cast<size_t>(rows) * cols);
    for (double& v : m) v = rng.normal();
    for (int i = 0; i < rows; ++i) {
        double* ri = m.data() + static_cast<size_t>(i) * cols;
        for (int j = 0; j < i; ++j) {
            const double* rj = m.data() + static_cast<size_t>(j) * cols;
            double dot = 0.0;
            for (int k = 0; k < cols; ++k) dot += ri[k] * rj[k];
            for (int k = 0; k < cols; ++k) ri[k] -= dot * rj[k];
        }
        double norm = 0.0;
        for (int k = 0; k < cols; ++k) norm += ri[k] * ri[k];
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw std::runtime_error("orthogonal init: degenerate draw");
        for (int k = 0; k < cols; ++k) ri[k] /= norm;
    }
    return m;
}

// --- shape helpers -------------------------------------------------------

inline int conv_out_size(int in, int kernel, int stride, int pad) {
    int out = (in + 2 * pad - kernel) / stride + 1;
    if (out <= 0) throw std::invalid_argument("conv output size would be non-positive");
    return out;
}

inline Tensor4 concat_channels(const std::vector<const Tensor4*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    int n = parts[0]->n(), h = parts[0]->h(), w = parts[0]->w();
    int c = 0;
    for (const Tensor4* p : parts) {
        if (p->n() != n || p->h() != h || p->w() != w)
            throw std::invalid_argument("concat: mismatched shapes");
        c += p->c();
    }
    Tensor4 out(n, c, h, w);
    size_t plane = static_cast<size_t>(h) * w;
    for (int in = 0; in < n; ++in) {
        double* dst = out.slice(in);
        for (const Tensor4* p : parts) {
            const double* src = p->slice(in);
            std::copy(src, src + p->sample_size(), dst);
            dst += p->sample_size();
        }
    }
    (void)plane;
    return out;
}

inline std::vector<Tensor4> split_channels(const Tensor4& x, const std::vector<int>& sizes) {
    int total = 0;
    for (int s : sizes) total += s;
    if (total != x.c()) throw std::invalid_argument("split: channel counts do not sum");
    std::vector<Tensor4> out;
    out.reserve(sizes.size());
    for (int s : sizes) out.emplace_back(x.n(), s, x.h(), x.w());
    for (int n = 0; n < x.n(); ++n) {
        const double* src = x.slice(n);
        for (size_t i = 0; i < sizes.size(); ++i) {
            double* dst = out[i].slice(n);
            std::copy(src, src + out[i].sample_size(), dst);
            src += out[i].sample_size();
        }
    }
    return out;
}

// --- Conv2d --------------------------------------------------------------

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng)
        : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad),
          weight(out_ch, in_ch, kernel, kernel), bias(1, out_ch, 1, 1) {
        weight.set_requires_grad(true);
        bias.set_requires_grad(true);
        kaiming_uniform(weight, in_ch * kernel * kernel, rng);
        bias_uniform(bias, in_ch * kernel * kernel, rng);
    }

    struct Ctx {
        Tensor4 x;
    };

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    int kernel() const { return k_; }
    int stride() const { return stride_; }
    int pad() const { return pad_; }

    Tensor4 forward(const Tensor4& x, Ctx* ctx = nullptr) const {
        if (x.c() != in_ch_) throw std::invalid_argument("Conv2d: channel mismatch");
        int oh = conv_out_size(x.h(), k_, stride_, pad_);
        int ow = conv_out_size(x.w(), k_, stride_, pad_);
        Tensor4 y(x.n(), out_ch_, oh, ow);
        int kdim = in_ch_ * k_ * k_;
        std::vector<double> col(static_cast<size_t>(kdim) * oh * ow);
        for (int n = 0; n < x.n(); ++n) {
            im2col(x, n, col.data(), oh, ow);
            gemm_nn(out_ch_, kdim, oh * ow, weight.data(), col.data(), y.slice(n));
            double* ys = y.slice(n);
            for (int oc = 0; oc < out_ch_; ++oc) {
                double b = bias.data()[oc];
                double* plane = ys + static_cast<size_t>(oc) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) plane[i] += b;
            }
        }
        if (ctx != nullptr) ctx->x = x;
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) {
        if (ctx.x.empty()) throw std::logic_error("Conv2d: backward without recorded forward");
        const Tensor4& x = ctx.x;
        int oh = dy.h(), ow = dy.w();
        int kdim = in_ch_ * k_ * k_;
        Tensor4 dx(x.n(), x.c(), x.h(), x.w());
        std::vector<double> col(static_cast<size_t>(kdim) * oh * ow);
        std::vector<double> dcol(static_cast<size_t>(kdim) * oh * ow);
        auto& dw = weight.grad();
        auto& db = bias.grad();
        for (int n = 0; n < x.n(); ++n) {
            im2col(x, n, col.data(), oh, ow);
            const double* dys = dy.slice(n);
            // dW += dY * col^T
            gemm_nt(out_ch_, oh * ow, kdim, dys, col.data(), dw.data(), true);
            for (int oc = 0; oc < out_ch_; ++oc) {
                const double* plane = dys + static_cast<size_t>(oc) * oh * ow;
                double acc = 0.0;
                for (int i = 0; i < oh * ow; ++i) acc += plane[i];
                db[oc] += acc;
            }
            // dcol = W^T * dY, then scatter back
            gemm_tn(kdim, out_ch_, oh * ow, weight.data(), dys, dcol.data());
            col2im(dcol.data(), dx, n, oh, ow);
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".weight", &weight, true});
        out.push_back({prefix + ".bias", &bias, true});
    }

    Tensor4 weight;  // (out_ch, in_ch, k, k)
    Tensor4 bias;    // (1, out_ch, 1, 1)

private:
    void im2col(const Tensor4& x, int n, double* col, int oh, int ow) const {
        const double* xs = x.slice(n);
        int ih = x.h(), iw = x.w();
        size_t row = 0;
        for (int c = 0; c < in_ch_; ++c) {
            const double* plane = xs + static_cast<size_t>(c) * ih * iw;
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    double* dst = col + row * oh * ow;
                    ++row;
                    for (int oy = 0; oy < oh; ++oy) {
                        int sy = oy * stride_ - pad_ + ky;
                        if (sy < 0 || sy >= ih) {
                            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = 0.0;
                            continue;
                        }
                        const double* srow = plane + static_cast<size_t>(sy) * iw;
                        for (int ox = 0; ox < ow; ++ox) {
                            int sx = ox * stride_ - pad_ + kx;
                            dst[oy * ow + ox] = (sx < 0 || sx >= iw) ? 0.0 : srow[sx];
                        }
                    }
                }
        }
    }

    void col2im(const double* col, Tensor4& dx, int n, int oh, int ow) const {
        double* xs = dx.slice(n);
        int ih = dx.h(), iw = dx.w();
        size_t row = 0;
        for (int c = 0; c < in_ch_; ++c) {
            double* plane = xs + static_cast<size_t>(c) * ih * iw;
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const double* src = col + row * oh * ow;
                    ++row;
                    for (int oy = 0; oy < oh; ++oy) {
                        int sy = oy * stride_ - pad_ + ky;
                        if (sy < 0 || sy >= ih) continue;
                        double* srow = plane + static_cast<size_t>(sy) * iw;
                        for (int ox = 0; ox < ow; ++ox) {
                            int sx = ox * stride_ - pad_ + kx;
                            if (sx >= 0 && sx < iw) srow[sx] += src[oy * ow + ox];
                        }
                    }
                }
        }
    }

    int in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

// --- LeakyReLU -----------------------------------------------------------

struct LeakyReLU {
    double slope = 0.01;

    struct Ctx {
        Tensor4 x;
    };

    Tensor4 forward(const Tensor4& x, Ctx* ctx = nullptr) const {
        Tensor4 y = x;
        for (double& v : y.flat())
            if (v < 0.0) v *= slope;
        if (ctx != nullptr) ctx->x = x;
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) const {
        if (ctx.x.empty()) throw std::logic_error("LeakyReLU: backward without forward");
        Tensor4 dx = dy;
        const double* xv = ctx.x.data();
        double* dv = dx.data();
        for (size_t i = 0; i < dx.size(); ++i)
            if (xv[i] < 0.0) dv[i] *= slope;
        return dx;
    }
};

// --- BatchNorm2d ---------------------------------------------------------

// Train mode normalizes with batch statistics over (N, H, W) per channel and
// updates running statistics; eval mode is the affine map from the frozen
// running statistics.
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
        : ch_(channels), eps_(eps), momentum_(momentum), gamma(1, channels, 1, 1, 1.0),
          beta(1, channels, 1, 1, 0.0), running_mean(1, channels, 1, 1, 0.0),
          running_var(1, channels, 1, 1, 1.0) {
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
    }

    struct Ctx {
        Tensor4 xhat;
        std::vector<double> invstd;
        Mode mode = Mode::train;
        bool recorded = false;
    };

    Tensor4 forward(const Tensor4& x, Mode mode, Ctx* ctx = nullptr) {
        if (x.c() != ch_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
        Tensor4 y(x.n(), x.c(), x.h(), x.w());
        size_t plane = static_cast<size_t>(x.h()) * x.w();
        size_t m = static_cast<size_t>(x.n()) * plane;
        std::vector<double> invstd(ch_);
        Tensor4 xhat(x.n(), x.c(), x.h(), x.w());
        for (int c = 0; c < ch_; ++c) {
            double mean, var;
            if (mode == Mode::train) {
                double sum = 0.0, sq = 0.0;
                for (int n = 0; n < x.n(); ++n) {
                    const double* p = x.slice(n) + static_cast<size_t>(c) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        sum += p[i];
                        sq += p[i] * p[i];
                    }
                }
                mean = sum / static_cast<double>(m);
                var = sq / static_cast<double>(m) - mean * mean;
                if (var < 0.0) var = 0.0;
                running_mean.data()[c] =
                    (1.0 - momentum_) * running_mean.data()[c] + momentum_ * mean;
                running_var.data()[c] =
                    (1.0 - momentum_) * running_var.data()[c] + momentum_ * var;
            } else {
                mean = running_mean.data()[c];
                var = running_var.data()[c];
            }
            double istd = 1.0 / std::sqrt(var + eps_);
            invstd[c] = istd;
            double g = gamma.data()[c], b = beta.data()[c];
            for (int n = 0; n < x.n(); ++n) {
                const double* p = x.slice(n) + static_cast<size_t>(c) * plane;
                double* q = y.slice(n) + static_cast<size_t>(c) * plane;
                double* xh = xhat.slice(n) + static_cast<size_t>(c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    xh[i] = (p[i] - mean) * istd;
                    q[i] = g * xh[i] + b;
                }
            }
        }
        if (ctx != nullptr) {
            ctx->xhat = std::move(xhat);
            ctx->invstd = std::move(invstd);
            ctx->mode = mode;
            ctx->recorded = true;
        }
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) {
        if (!ctx.recorded) throw std::logic_error("BatchNorm2d: backward without forward");
        const Tensor4& xhat = ctx.xhat;
        size_t plane = static_cast<size_t>(dy.h()) * dy.w();
        double m = static_cast<double>(dy.n()) * plane;
        Tensor4 dx(dy.n(), dy.c(), dy.h(), dy.w());
        auto& dgamma = gamma.grad();
        auto& dbeta = beta.grad();
        for (int c = 0; c < ch_; ++c) {
            double g = gamma.data()[c];
            double istd = ctx.invstd[c];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < dy.n(); ++n) {
                const double* d = dy.slice(n) + static_cast<size_t>(c) * plane;
                const double* xh = xhat.slice(n) + static_cast<size_t>(c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    sum_dy += d[i];
                    sum_dy_xhat += d[i] * xh[i];
                }
            }
            dgamma[c] += sum_dy_xhat;
            dbeta[c] += sum_dy;
            for (int n = 0; n < dy.n(); ++n) {
                const double* d = dy.slice(n) + static_cast<size_t>(c) * plane;
                const double* xh = xhat.slice(n) + static_cast<size_t>(c) * plane;
                double* o = dx.slice(n) + static_cast<size_t>(c) * plane;
                if (ctx.mode == Mode::train) {
                    for (size_t i = 0; i < plane; ++i)
                        o[i] = g * istd * (d[i] - sum_dy / m - xh[i] * sum_dy_xhat / m);
                } else {
                    for (size_t i = 0; i < plane; ++i) o[i] = g * istd * d[i];
                }
            }
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".gamma", &gamma, true});
        out.push_back({prefix + ".beta", &beta, true});
        out.push_back({prefix + ".running_mean", &running_mean, false});
        out.push_back({prefix + ".running_var", &running_var, false});
    }

    int channels() const { return ch_; }

    Tensor4 gamma, beta;
    Tensor4 running_mean, running_var;

private:
    int ch_ = 0;
    double eps_ = 1e-5;
    double momentum_ = 0.1;
};

// --- bilinear upsample (align-corners) -----------------------------------

class BilinearUpsample {
public:
    BilinearUpsample() = default;
    BilinearUpsample(int out_h, int out_w) : oh_(out_h), ow_(out_w) {}

    struct Ctx {
        int in_h = 0, in_w = 0;
    };

    Tensor4 forward(const Tensor4& x, Ctx* ctx = nullptr) const {
        Tensor4 y(x.n(), x.c(), oh_, ow_);
        auto axis = [](int out, int in, int i) {
            if (out <= 1 || in <= 1) return std::pair<int, double>{0, 0.0};
            double src = static_cast<double>(i) * (in - 1) / (out - 1);
            int i0 = std::min(static_cast<int>(src), in - 2);
            return std::pair<int, double>{i0, src - i0};
        };
        for (int n = 0; n < x.n(); ++n)
            for (int c = 0; c < x.c(); ++c) {
                const double* src = x.slice(n) + static_cast<size_t>(c) * x.h() * x.w();
                double* dst = y.slice(n) + static_cast<size_t>(c) * oh_ * ow_;
                for (int oy = 0; oy < oh_; ++oy) {
                    auto [y0, fy] = axis(oh_, x.h(), oy);
                    int y1 = std::min(y0 + 1, x.h() - 1);
                    for (int ox = 0; ox < ow_; ++ox) {
                        auto [x0, fx] = axis(ow_, x.w(), ox);
                        int x1 = std::min(x0 + 1, x.w() - 1);
                        dst[oy * ow_ + ox] =
                            (1 - fy) * ((1 - fx) * src[y0 * x.w() + x0] +
                                        fx * src[y0 * x.w() + x1]) +
                            fy * ((1 - fx) * src[y1 * x.w() + x0] + fx * src[y1 * x.w() + x1]);
                    }
                }
            }
        if (ctx != nullptr) {
            ctx->in_h = x.h();
            ctx->in_w = x.w();
        }
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) const {
        if (ctx.in_h == 0) throw std::logic_error("BilinearUpsample: backward without forward");
        Tensor4 dx(dy.n(), dy.c(), ctx.in_h, ctx.in_w);
        auto axis = [](int out, int in, int i) {
            if (out <= 1 || in <= 1) return std::pair<int, double>{0, 0.0};
            double src = static_cast<double>(i) * (in - 1) / (out - 1);
            int i0 = std::min(static_cast<int>(src), in - 2);
            return std::pair<int, double>{i0, src - i0};
        };
        for (int n = 0; n < dy.n(); ++n)
            for (int c = 0; c < dy.c(); ++c) {
                double* dst = dx.slice(n) + static_cast<size_t>(c) * ctx.in_h * ctx.in_w;
                const double* src = dy.slice(n) + static_cast<size_t>(c) * oh_ * ow_;
                for (int oy = 0; oy < oh_; ++oy) {
                    auto [y0, fy] = axis(oh_, ctx.in_h, oy);
                    int y1 = std::min(y0 + 1, ctx.in_h - 1);
                    for (int ox = 0; ox < ow_; ++ox) {
                        auto [x0, fx] = axis(ow_, ctx.in_w, ox);
                        int x1 = std::min(x0 + 1, ctx.in_w - 1);
                        double g = src[oy * ow_ + ox];
                        dst[y0 * ctx.in_w + x0] += (1 - fy) * (1 - fx) * g;
                        dst[y0 * ctx.in_w + x1] += (1 - fy) * fx * g;
                        dst[y1 * ctx.in_w + x0] += fy * (1 - fx) * g;
                        dst[y1 * ctx.in_w + x1] += fy * fx * g;
                    }
                }
            }
        return dx;
    }

    int out_h() const { return oh_; }
    int out_w() const { return ow_; }

private:
    int oh_ = 0, ow_ = 0;
};

// --- Linear over (N, C, 1, 1) token tensors -------------------------------

class Linear {
public:
    Linear() = default;
    Linear(int in_dim, int out_dim, Rng& rng)
        : in_(in_dim), out_(out_dim), weight(out_dim, in_dim, 1, 1), bias(1, out_dim, 1, 1) {
        weight.set_requires_grad(true);
        bias.set_requires_grad(true);
        kaiming_uniform(weight, in_dim, rng);
        bias_uniform(bias, in_dim, rng);
    }

    struct Ctx {
        Tensor4 x;
    };

    Tensor4 forward(const Tensor4& x, Ctx* ctx = nullptr) const {
        if (x.c() != in_ || x.h() != 1 || x.w() != 1)
            throw std::invalid_argument("Linear: expected (N, in_dim, 1, 1)");
        Tensor4 y(x.n(), out_, 1, 1);
        gemm_nt(x.n(), in_, out_, x.data(), weight.data(), y.data());
        for (int n = 0; n < x.n(); ++n) {
            double* row = y.slice(n);
            for (int j = 0; j < out_; ++j) row[j] += bias.data()[j];
        }
        if (ctx != nullptr) ctx->x = x;
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) {
        if (ctx.x.empty()) throw std::logic_error("Linear: backward without forward");
        const Tensor4& x = ctx.x;
        Tensor4 dx(x.n(), in_, 1, 1);
        gemm_nn(x.n(), out_, in_, dy.data(), weight.data(), dx.data());
        gemm_tn(out_, x.n(), in_, dy.data(), x.data(), weight.grad().data(), true);
        auto& db = bias.grad();
        for (int n = 0; n < x.n(); ++n) {
            const double* row = dy.slice(n);
            for (int j = 0; j < out_; ++j) db[j] += row[j];
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".weight", &weight, true});
        out.push_back({prefix + ".bias", &bias, true});
    }

    int in_dim() const { return in_; }
    int out_dim() const { return out_; }

    Tensor4 weight, bias;

private:
    int in_ = 0, out_ = 0;
};

// --- ConvLSTM -------------------------------------------------------------

struct ConvLstmState {
    Tensor4 hidden;
    Tensor4 cell;

    static ConvLstmState zeros(int n, int channels, int h, int w) {
        return {Tensor4(n, channels, h, w), Tensor4(n, channels, h, w)};
    }
    bool empty() const { return hidden.empty(); }
};

// Single convolutional LSTM cell: one convolution over [x, h] producing the
// four gate pre-activations (order i, f, g, o). Forget-gate bias starts at 1.
class ConvLstm {
public:
    ConvLstm() = default;
    ConvLstm(int in_ch, int hidden_ch, int kernel, Rng& rng)
        : in_ch_(in_ch), hidden_ch_(hidden_ch),
          gates(in_ch + hidden_ch, 4 * hidden_ch, kernel, 1, kernel / 2, rng) {
        // orthogonal rows per gate for the hidden-to-hidden kernel slice
        int k = kernel;
        for (int gate = 0; gate < 4; ++gate) {
            auto m = orthogonal_rows(hidden_ch, hidden_ch * k * k, rng);
            for (int oc = 0; oc < hidden_ch; ++oc)
                for (int ic = 0; ic < hidden_ch; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            gates.weight.at(gate * hidden_ch + oc, in_ch + ic, ky, kx) =
                                m[(static_cast<size_t>(oc) * hidden_ch + ic) * k * k + ky * k +
                                  kx];
        }
        for (int c = 0; c < hidden_ch; ++c) gates.bias.data()[hidden_ch + c] = 1.0;
    }

    struct Ctx {
        Conv2d::Ctx conv;
        Tensor4 i_s, f_s, g_t, o_s;
        Tensor4 c_prev, c_new_tanh;
        bool recorded = false;
    };

    std::pair<Tensor4, ConvLstmState> step(const Tensor4& x, const ConvLstmState& state,
                                           Ctx* ctx = nullptr) const {
        if (x.c() != in_ch_) throw std::invalid_argument("ConvLstm: channel mismatch");
        if (state.hidden.c() != hidden_ch_ || state.hidden.h() != x.h() ||
            state.hidden.w() != x.w())
            throw std::invalid_argument("ConvLstm: state shape mismatch");
        Tensor4 joint = concat_channels({&x, &state.hidden});
        Conv2d::Ctx conv_ctx;
        Tensor4 pre = gates.forward(joint, ctx != nullptr ? &conv_ctx : nullptr);
        int n = x.n(), h = x.h(), w = x.w();
        Tensor4 i_s(n, hidden_ch_, h, w), f_s(n, hidden_ch_, h, w), g_t(n, hidden_ch_, h, w),
            o_s(n, hidden_ch_, h, w);
        Tensor4 c_new(n, hidden_ch_, h, w), h_new(n, hidden_ch_, h, w),
            c_new_tanh(n, hidden_ch_, h, w);
        size_t plane = static_cast<size_t>(h) * w;
        size_t gate_sz = static_cast<size_t>(hidden_ch_) * plane;
        for (int in = 0; in < n; ++in) {
            const double* p = pre.slice(in);
            const double* cp = state.cell.slice(in);
            double* pi = i_s.slice(in);
            double* pf = f_s.slice(in);
            double* pg = g_t.slice(in);
            double* po = o_s.slice(in);
            double* pc = c_new.slice(in);
            double* pct = c_new_tanh.slice(in);
            double* ph = h_new.slice(in);
            for (size_t i = 0; i < gate_sz; ++i) {
                pi[i] = 1.0 / (1.0 + std::exp(-p[i]));
                pf[i] = 1.0 / (1.0 + std::exp(-p[gate_sz + i]));
                pg[i] = std::tanh(p[2 * gate_sz + i]);
                po[i] = 1.0 / (1.0 + std::exp(-p[3 * gate_sz + i]));
                pc[i] = pf[i] * cp[i] + pi[i] * pg[i];
                pct[i] = std::tanh(pc[i]);
                ph[i] = po[i] * pct[i];
            }
        }
        if (ctx != nullptr) {
            ctx->conv = std::move(conv_ctx);
            ctx->i_s = i_s;
            ctx->f_s = f_s;
            ctx->g_t = g_t;
            ctx->o_s = o_s;
            ctx->c_prev = state.cell;
            ctx->c_new_tanh = c_new_tanh;
            ctx->recorded = true;
        }
        return {h_new, ConvLstmState{h_new, c_new}};
    }

    // Returns (dx, d_state_prev); accumulates parameter gradients.
    std::pair<Tensor4, ConvLstmState> backward(const Ctx& ctx, const Tensor4& dh,
                                               const Tensor4& dc_in) {
        if (!ctx.recorded) throw std::logic_error("ConvLstm: backward without forward");
        int n = dh.n(), h = dh.h(), w = dh.w();
        size_t gate_sz = static_cast<size_t>(hidden_ch_) * h * w;
        Tensor4 dpre(n, 4 * hidden_ch_, h, w);
        Tensor4 dc_prev(n, hidden_ch_, h, w);
        for (int in = 0; in < n; ++in) {
            const double* gdh = dh.slice(in);
            const double* gdc = dc_in.empty() ? nullptr : dc_in.slice(in);
            const double* pi = ctx.i_s.slice(in);
            const double* pf = ctx.f_s.slice(in);
            const double* pg = ctx.g_t.slice(in);
            const double* po = ctx.o_s.slice(in);
            const double* pct = ctx.c_new_tanh.slice(in);
            const double* cp = ctx.c_prev.slice(in);
            double* dp = dpre.slice(in);
            double* dcp = dc_prev.slice(in);
            for (size_t i = 0; i < gate_sz; ++i) {
                double dc = (gdc != nullptr ? gdc[i] : 0.0) +
                            gdh[i] * po[i] * (1.0 - pct[i] * pct[i]);
                double do_pre = gdh[i] * pct[i] * po[i] * (1.0 - po[i]);
                double di_pre = dc * pg[i] * pi[i] * (1.0 - pi[i]);
                double df_pre = dc * cp[i] * pf[i] * (1.0 - pf[i]);
                double dg_pre = dc * pi[i] * (1.0 - pg[i] * pg[i]);
                dp[i] = di_pre;
                dp[gate_sz + i] = df_pre;
                dp[2 * gate_sz + i] = dg_pre;
                dp[3 * gate_sz + i] = do_pre;
                dcp[i] = dc * pf[i];
            }
        }
        Tensor4 djoint = gates.backward(ctx.conv, dpre);
        auto parts = split_channels(djoint, {in_ch_, hidden_ch_});
        return {std::move(parts[0]), ConvLstmState{std::move(parts[1]), std::move(dc_prev)}};
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        gates.collect_params(prefix + ".gates", out);
    }

    int hidden_channels() const { return hidden_ch_; }
    int in_channels() const { return in_ch_; }

    Conv2d gates;

private:
    int in_ch_ = 0, hidden_ch_ = 0;
};

// --- multi-head self-attention over (N, D, 1, 1) tokens -------------------

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(int dim, int heads, Rng& rng)
        : dim_(dim), heads_(heads), wq(dim, dim, rng), wk(dim, dim, rng), wv(dim, dim, rng),
          wo(dim, dim, rng) {
        if (dim % heads != 0)
            throw std::invalid_argument("MultiHeadAttention: dim must divide by heads");
    }

    struct Ctx {
        Linear::Ctx q_ctx, k_ctx, v_ctx, o_ctx;
        Tensor4 q, k, v;
        std::vector<double> attn;  // heads x N x N softmax weights
        int n = 0;
        bool recorded = false;
    };

    Tensor4 forward(const Tensor4& x, Ctx* ctx = nullptr) const {
        int n = x.n();
        if (n < 1) throw std::invalid_argument("MultiHeadAttention: empty token set");
        int dh = dim_ / heads_;
        Ctx local;
        Ctx* c = ctx != nullptr ? ctx : &local;
        Tensor4 q = wq.forward(x, &c->q_ctx);
        Tensor4 k = wk.forward(x, &c->k_ctx);
        Tensor4 v = wv.forward(x, &c->v_ctx);
        std::vector<double> attn(static_cast<size_t>(heads_) * n * n);
        Tensor4 fused(n, dim_, 1, 1);
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int hd = 0; hd < heads_; ++hd) {
            double* a = attn.data() + static_cast<size_t>(hd) * n * n;
            for (int i = 0; i < n; ++i) {
                const double* qi = q.slice(i) + hd * dh;
                double maxv = -1e300;
                for (int j = 0; j < n; ++j) {
                    const double* kj = k.slice(j) + hd * dh;
                    double dot = 0.0;
                    for (int d = 0; d < dh; ++d) dot += qi[d] * kj[d];
                    a[i * n + j] = dot * scale;
                    maxv = std::max(maxv, a[i * n + j]);
                }
                double sum = 0.0;
                for (int j = 0; j < n; ++j) {
                    a[i * n + j] = std::exp(a[i * n + j] - maxv);
                    sum += a[i * n + j];
                }
                for (int j = 0; j < n; ++j) a[i * n + j] /= sum;
                double* out = fused.slice(i) + hd * dh;
                for (int d = 0; d < dh; ++d) out[d] = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double* vj = v.slice(j) + hd * dh;
                    double w = a[i * n + j];
                    for (int d = 0; d < dh; ++d) out[d] += w * vj[d];
                }
            }
        }
        Tensor4 y = wo.forward(fused, &c->o_ctx);
        if (ctx != nullptr) {
            ctx->q = std::move(q);
            ctx->k = std::move(k);
            ctx->v = std::move(v);
            ctx->attn = std::move(attn);
            ctx->n = n;
            ctx->recorded = true;
        }
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) {
        if (!ctx.recorded) throw std::logic_error("MultiHeadAttention: backward without forward");
        int n = ctx.n;
        int dh = dim_ / heads_;
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor4 dfused = wo.backward(ctx.o_ctx, dy);
        Tensor4 dq(n, dim_, 1, 1), dk(n, dim_, 1, 1), dv(n, dim_, 1, 1);
        for (int hd = 0; hd < heads_; ++hd) {
            const double* a = ctx.attn.data() + static_cast<size_t>(hd) * n * n;
            for (int i = 0; i < n; ++i) {
                const double* dfi = dfused.slice(i) + hd * dh;
                // dV and dA
                std::vector<double> da(n);
                for (int j = 0; j < n; ++j) {
                    const double* vj = ctx.v.slice(j) + hd * dh;
                    double* dvj = dv.slice(j) + hd * dh;
                    double w = a[i * n + j];
                    double dot = 0.0;
                    for (int d = 0; d < dh; ++d) {
                        dvj[d] += w * dfi[d];
                        dot += dfi[d] * vj[d];
                    }
                    da[j] = dot;
                }
                // softmax backward over row i
                double inner = 0.0;
                for (int j = 0; j < n; ++j) inner += da[j] * a[i * n + j];
                for (int j = 0; j < n; ++j) {
                    double ds = a[i * n + j] * (da[j] - inner) * scale;
                    const double* kj = ctx.k.slice(j) + hd * dh;
                    const double* qi = ctx.q.slice(i) + hd * dh;
                    double* dqi = dq.slice(i) + hd * dh;
                    double* dkj = dk.slice(j) + hd * dh;
                    for (int d = 0; d < dh; ++d) {
                        dqi[d] += ds * kj[d];
                        dkj[d] += ds * qi[d];
                    }
                }
            }
        }
        Tensor4 dx = wq.backward(ctx.q_ctx, dq);
        Tensor4 dxk = wk.backward(ctx.k_ctx, dk);
        Tensor4 dxv = wv.backward(ctx.v_ctx, dv);
        for (size_t i = 0; i < dx.size(); ++i)
            dx.data()[i] += dxk.data()[i] + dxv.data()[i];
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        wq.collect_params(prefix + ".wq", out);
        wk.collect_params(prefix + ".wk", out);
        wv.collect_params(prefix + ".wv", out);
        wo.collect_params(prefix + ".wo", out);
    }

    int dim() const { return dim_; }
    int heads() const { return heads_; }

    Linear wq, wk, wv, wo;

private:
    int dim_ = 0, heads_ = 0;
};

// --- LayerScale ------------------------------------------------------------

class LayerScale {
public:
    LayerScale() = default;
    LayerScale(int dim, double init) : gamma(1, dim, 1, 1, init) {
        gamma.set_requires_grad(true);
    }

    struct Ctx {
        Tensor4 x;
    };

    Tensor4 forward(const Tensor4& x, Ctx* ctx = nullptr) const {
        Tensor4 y = x;
        for (int n = 0; n < x.n(); ++n) {
            double* row = y.slice(n);
            for (int c = 0; c < x.c(); ++c) row[c] *= gamma.data()[c];
        }
        if (ctx != nullptr) ctx->x = x;
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) {
        if (ctx.x.empty()) throw std::logic_error("LayerScale: backward without forward");
        Tensor4 dx = dy;
        auto& dg = gamma.grad();
        for (int n = 0; n < dy.n(); ++n) {
            double* row = dx.slice(n);
            const double* xr = ctx.x.slice(n);
            const double* dr = dy.slice(n);
            for (int c = 0; c < dy.c(); ++c) {
                dg[c] += dr[c] * xr[c];
                row[c] = dr[c] * gamma.data()[c];
            }
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".gamma", &gamma, true});
    }

    Tensor4 gamma;
};

// --- gating: s' = g * s_prev + (1 - g) * x, g = sigmoid(W [x; s_prev] + b) --

class GatingUnit {
public:
    GatingUnit() = default;
    GatingUnit(int dim, Rng& rng) : dim_(dim), lin(2 * dim, dim, rng) {}

    struct Ctx {
        Linear::Ctx lin_ctx;
        Tensor4 x, s_prev, g;
        bool recorded = false;
    };

    Tensor4 forward(const Tensor4& x, const Tensor4& s_prev, Ctx* ctx = nullptr) const {
        Tensor4 joint = concat_channels({&x, &s_prev});
        Ctx local;
        Ctx* c = ctx != nullptr ? ctx : &local;
        Tensor4 pre = lin.forward(joint, &c->lin_ctx);
        Tensor4 g = pre;
        for (double& v : g.flat()) v = 1.0 / (1.0 + std::exp(-v));
        Tensor4 s(x.n(), dim_, 1, 1);
        for (int n = 0; n < x.n(); ++n) {
            const double* gx = g.slice(n);
            const double* xv = x.slice(n);
            const double* sv = s_prev.slice(n);
            double* out = s.slice(n);
            for (int d = 0; d < dim_; ++d) out[d] = gx[d] * sv[d] + (1.0 - gx[d]) * xv[d];
        }
        if (ctx != nullptr) {
            ctx->x = x;
            ctx->s_prev = s_prev;
            ctx->g = std::move(g);
            ctx->recorded = true;
        }
        return s;
    }

    // Returns (dx, ds_prev).
    std::pair<Tensor4, Tensor4> backward(const Ctx& ctx, const Tensor4& ds) {
        if (!ctx.recorded) throw std::logic_error("GatingUnit: backward without forward");
        int n = ds.n();
        Tensor4 dg_pre(n, dim_, 1, 1);
        Tensor4 dx(n, dim_, 1, 1), dsp(n, dim_, 1, 1);
        for (int in = 0; in < n; ++in) {
            const double* d = ds.slice(in);
            const double* g = ctx.g.slice(in);
            const double* xv = ctx.x.slice(in);
            const double* sv = ctx.s_prev.slice(in);
            double* dgp = dg_pre.slice(in);
            double* dxv = dx.slice(in);
            double* dspv = dsp.slice(in);
            for (int k = 0; k < dim_; ++k) {
                dspv[k] = d[k] * g[k];
                dxv[k] = d[k] * (1.0 - g[k]);
                dgp[k] = d[k] * (sv[k] - xv[k]) * g[k] * (1.0 - g[k]);
            }
        }
        Tensor4 djoint = lin.backward(ctx.lin_ctx, dg_pre);
        auto parts = split_channels(djoint, {dim_, dim_});
        for (size_t i = 0; i < dx.size(); ++i) {
            dx.data()[i] += parts[0].data()[i];
            dsp.data()[i] += parts[1].data()[i];
        }
        return {std::move(dx), std::move(dsp)};
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        lin.collect_params(prefix + ".lin", out);
    }

    int dim() const { return dim_; }

    Linear lin;

private:
    int dim_ = 0;
};

// --- conv -> LeakyReLU -> BatchNorm block ----------------------------------

class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng)
        : conv(in_ch, out_ch, kernel, stride, pad, rng), bn(out_ch) {}

    struct Ctx {
        Conv2d::Ctx conv;
        LeakyReLU::Ctx act;
        BatchNorm2d::Ctx bn;
    };

    Tensor4 forward(const Tensor4& x, Mode mode, Ctx* ctx = nullptr) {
        Conv2d::Ctx cc;
        LeakyReLU::Ctx ac;
        BatchNorm2d::Ctx bc;
        Tensor4 y = conv.forward(x, ctx != nullptr ? &cc : nullptr);
        y = act.forward(y, ctx != nullptr ? &ac : nullptr);
        y = bn.forward(y, mode, ctx != nullptr ? &bc : nullptr);
        if (ctx != nullptr) {
            ctx->conv = std::move(cc);
            ctx->act = std::move(ac);
            ctx->bn = std::move(bc);
        }
        return y;
    }

    Tensor4 backward(const Ctx& ctx, const Tensor4& dy) {
        Tensor4 d = bn.backward(ctx.bn, dy);
        d = act.backward(ctx.act, d);
        return conv.backward(ctx.conv, d);
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        conv.collect_params(prefix + ".conv", out);
        bn.collect_params(prefix + ".bn", out);
    }

    Conv2d conv;
    LeakyReLU act;
    BatchNorm2d bn;
};

}  // namespace evtrk
