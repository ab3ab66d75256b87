#include "cfpa/tensornet.hpp"

#include <cmath>
#include <stdexcept>

namespace cfpa {

void Conv2d::configure(int in, int out, int k, int sy, int sx, int padding) {
    in_ch = in;
    out_ch = out;
    ksize = k;
    stride_y = sy;
    stride_x = sx;
    pad = padding;
    weight.resize(out, in, k, k);
    bias.resize(1, out, 1, 1);
}

void Conv2d::init_kaiming(Rng& rng) {
    const double fan_in = static_cast<double>(in_ch) * ksize * ksize;
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& w : weight.value.v) w = rng.uniform(-bound, bound);
    std::fill(bias.value.v.begin(), bias.value.v.end(), 0.0);
}

void Conv2d::init_zero() {
    std::fill(weight.value.v.begin(), weight.value.v.end(), 0.0);
    std::fill(bias.value.v.begin(), bias.value.v.end(), 0.0);
}

Tensor4 Conv2d::forward(const Tensor4& x) {
    if (x.c != in_ch) throw std::invalid_argument("Conv2d: channel mismatch");
    const int ho = (x.h + 2 * pad - ksize) / stride_y + 1;
    const int wo = (x.w + 2 * pad - ksize) / stride_x + 1;
    cached_x = x;
    Tensor4 y(x.n, out_ch, ho, wo);
    for (int b = 0; b < x.n; ++b) {
        for (int o = 0; o < out_ch; ++o) {
            const double bo = bias.value.v[o];
            for (int yo = 0; yo < ho; ++yo) {
                for (int xo = 0; xo < wo; ++xo) {
                    double acc = bo;
                    for (int i = 0; i < in_ch; ++i) {
                        for (int u = 0; u < ksize; ++u) {
                            const int yi = yo * stride_y + u - pad;
                            if (yi < 0 || yi >= x.h) continue;
                            for (int v = 0; v < ksize; ++v) {
                                const int xi = xo * stride_x + v - pad;
                                if (xi < 0 || xi >= x.w) continue;
                                acc += weight.value.at(o, i, u, v) * x.at(b, i, yi, xi);
                            }
                        }
                    }
                    y.at(b, o, yo, xo) = acc;
                }
            }
        }
    }
    return y;
}

Tensor4 Conv2d::backward(const Tensor4& gy) {
    const Tensor4& x = cached_x;
    Tensor4 gx = Tensor4::zeros_like(x);
    for (int b = 0; b < x.n; ++b) {
        for (int o = 0; o < out_ch; ++o) {
            for (int yo = 0; yo < gy.h; ++yo) {
                for (int xo = 0; xo < gy.w; ++xo) {
                    const double g = gy.at(b, o, yo, xo);
                    if (g == 0.0) continue;
                    bias.grad.v[o] += g;
                    for (int i = 0; i < in_ch; ++i) {
                        for (int u = 0; u < ksize; ++u) {
                            const int yi = yo * stride_y + u - pad;
                            if (yi < 0 || yi >= x.h) continue;
                            for (int v = 0; v < ksize; ++v) {
                                const int xi = xo * stride_x + v - pad;
                                if (xi < 0 || xi >= x.w) continue;
                                weight.grad.at(o, i, u, v) += g * x.at(b, i, yi, xi);
                                gx.at(b, i, yi, xi) += g * weight.value.at(o, i, u, v);
                            }
                        }
                    }
                }
            }
        }
    }
    return gx;
}

void BatchNorm2d::configure(int channels) {
    ch = channels;
    gamma.resize(1, channels, 1, 1);
    beta.resize(1, channels, 1, 1);
    std::fill(gamma.value.v.begin(), gamma.value.v.end(), 1.0);
    running_mean = Tensor4(1, channels, 1, 1, 0.0);
    running_var = Tensor4(1, channels, 1, 1, 1.0);
}

Tensor4 BatchNorm2d::forward(const Tensor4& x, bool train) {
    if (x.c != ch) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    Tensor4 y = Tensor4::zeros_like(x);
    const int count = x.n * x.h * x.w;
    if (train) {
        cached_xhat = Tensor4::zeros_like(x);
        cached_istd.assign(ch, 0.0);
        cached_count = count;
    }
    for (int j = 0; j < ch; ++j) {
        double mean, var;
        if (train) {
            double sum = 0.0, sq = 0.0;
            for (int b = 0; b < x.n; ++b)
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) {
                        const double u = x.at(b, j, yy, xx);
                        sum += u;
                        sq += u * u;
                    }
            mean = sum / count;
            var = sq / count - mean * mean;
            if (var < 0.0) var = 0.0;
            running_mean.v[j] = (1.0 - momentum) * running_mean.v[j] + momentum * mean;
            const double unbiased = (count > 1) ? var * count / (count - 1.0) : var;
            running_var.v[j] = (1.0 - momentum) * running_var.v[j] + momentum * unbiased;
        } else {
            mean = running_mean.v[j];
            var = running_var.v[j];
        }
        const double istd = 1.0 / std::sqrt(var + eps);
        if (train) cached_istd[j] = istd;
        const double g = gamma.value.v[j], be = beta.value.v[j];
        for (int b = 0; b < x.n; ++b)
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx) {
                    const double xhat = (x.at(b, j, yy, xx) - mean) * istd;
                    if (train) cached_xhat.at(b, j, yy, xx) = xhat;
                    y.at(b, j, yy, xx) = g * xhat + be;
                }
    }
    return y;
}

Tensor4 BatchNorm2d::backward(const Tensor4& gy) {
    if (cached_count == 0) throw std::runtime_error("BatchNorm2d: backward before train forward");
    const Tensor4& xhat = cached_xhat;
    Tensor4 gx = Tensor4::zeros_like(gy);
    const double count = static_cast<double>(cached_count);
    for (int j = 0; j < ch; ++j) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int b = 0; b < gy.n; ++b)
            for (int yy = 0; yy < gy.h; ++yy)
                for (int xx = 0; xx < gy.w; ++xx) {
                    const double g = gy.at(b, j, yy, xx);
                    sum_gy += g;
                    sum_gy_xhat += g * xhat.at(b, j, yy, xx);
                }
        gamma.grad.v[j] += sum_gy_xhat;
        beta.grad.v[j] += sum_gy;
        const double scale = gamma.value.v[j] * cached_istd[j];
        for (int b = 0; b < gy.n; ++b)
            for (int yy = 0; yy < gy.h; ++yy)
                for (int xx = 0; xx < gy.w; ++xx) {
                    const double g = gy.at(b, j, yy, xx);
                    const double xh = xhat.at(b, j, yy, xx);
                    gx.at(b, j, yy, xx) =
                        scale * (g - sum_gy / count - xh * sum_gy_xhat / count);
                }
    }
    return gx;
}

Tensor4 LeakyReLU::forward(const Tensor4& x) {
    cached_x = x;
    Tensor4 y = x;
    for (auto& u : y.v)
        if (u < 0.0) u *= slope;
    return y;
}

Tensor4 LeakyReLU::backward(const Tensor4& gy) const {
    Tensor4 gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i)
        if (cached_x.v[i] < 0.0) gx.v[i] *= slope;
    return gx;
}

void Linear::configure(int in, int out) {
    in_f = in;
    out_f = out;
    weight.resize(1, out * in, 1, 1);
    bias.resize(1, out, 1, 1);
}

void Linear::init_kaiming(Rng& rng) {
    const double bound = std::sqrt(6.0 / in_f);
    for (auto& w : weight.value.v) w = rng.uniform(-bound, bound);
    std::fill(bias.value.v.begin(), bias.value.v.end(), 0.0);
}

Tensor4 Linear::forward(const Tensor4& x) {
    if (x.c != in_f || x.h != 1 || x.w != 1)
        throw std::invalid_argument("Linear: expected (B, in, 1, 1) input");
    cached_x = x;
    Tensor4 y(x.n, out_f, 1, 1);
    for (int b = 0; b < x.n; ++b)
        for (int o = 0; o < out_f; ++o) {
            double acc = bias.value.v[o];
            for (int i = 0; i < in_f; ++i)
                acc += weight.value.v[static_cast<size_t>(o) * in_f + i] * x.at(b, i, 0, 0);
            y.at(b, o, 0, 0) = acc;
        }
    return y;
}

Tensor4 Linear::backward(const Tensor4& gy) {
    const Tensor4& x = cached_x;
    Tensor4 gx = Tensor4::zeros_like(x);
    for (int b = 0; b < x.n; ++b)
        for (int o = 0; o < out_f; ++o) {
            const double g = gy.at(b, o, 0, 0);
            bias.grad.v[o] += g;
            for (int i = 0; i < in_f; ++i) {
                weight.grad.v[static_cast<size_t>(o) * in_f + i] += g * x.at(b, i, 0, 0);
                gx.at(b, i, 0, 0) += g * weight.value.v[static_cast<size_t>(o) * in_f + i];
            }
        }
    return gx;
}

namespace {
double softplus_stable(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Tensor4 SoftplusFloor::forward(const Tensor4& x) {
    cached_x = x;
    Tensor4 y = x;
    for (auto& u : y.v) u = softplus_stable(u) + floor;
    return y;
}

Tensor4 SoftplusFloor::backward(const Tensor4& gy) const {
    Tensor4 gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= sigmoid(cached_x.v[i]);
    return gx;
}

Tensor4 pixel_unshuffle(const Tensor4& x, int s1, int s2) {
    if (x.h % s1 != 0 || x.w % s2 != 0)
        throw std::invalid_argument("pixel_unshuffle: dims not divisible by factors");
    Tensor4 y(x.n, x.c * s1 * s2, x.h / s1, x.w / s2);
    for (int b = 0; b < x.n; ++b)
        for (int j = 0; j < x.c; ++j)
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx)
                    y.at(b, j * s1 * s2 + (yy % s1) * s2 + (xx % s2), yy / s1, xx / s2) =
                        x.at(b, j, yy, xx);
    return y;
}

Tensor4 pixel_shuffle(const Tensor4& x, int s1, int s2) {
    if (x.c % (s1 * s2) != 0)
        throw std::invalid_argument("pixel_shuffle: channels not divisible by factors");
    Tensor4 y(x.n, x.c / (s1 * s2), x.h * s1, x.w * s2);
    for (int b = 0; b < y.n; ++b)
        for (int j = 0; j < y.c; ++j)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx)
                    y.at(b, j, yy, xx) =
                        x.at(b, j * s1 * s2 + (yy % s1) * s2 + (xx % s2), yy / s1, xx / s2);
    return y;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat_channels: shape mismatch");
    Tensor4 y(a.n, a.c + b.c, a.h, a.w);
    for (int i = 0; i < a.n; ++i) {
        for (int j = 0; j < a.c; ++j)
            for (int yy = 0; yy < a.h; ++yy)
                for (int xx = 0; xx < a.w; ++xx) y.at(i, j, yy, xx) = a.at(i, j, yy, xx);
        for (int j = 0; j < b.c; ++j)
            for (int yy = 0; yy < b.h; ++yy)
                for (int xx = 0; xx < b.w; ++xx) y.at(i, a.c + j, yy, xx) = b.at(i, j, yy, xx);
    }
    return y;
}

void split_channels(const Tensor4& g, int c_first, Tensor4& ga, Tensor4& gb) {
    ga = Tensor4(g.n, c_first, g.h, g.w);
    gb = Tensor4(g.n, g.c - c_first, g.h, g.w);
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < c_first; ++j)
            for (int yy = 0; yy < g.h; ++yy)
                for (int xx = 0; xx < g.w; ++xx) ga.at(i, j, yy, xx) = g.at(i, j, yy, xx);
        for (int j = c_first; j < g.c; ++j)
            for (int yy = 0; yy < g.h; ++yy)
                for (int xx = 0; xx < g.w; ++xx)
                    gb.at(i, j - c_first, yy, xx) = g.at(i, j, yy, xx);
    }
}

Tensor4 divide_by_latent(const Tensor4& x, const Tensor4& r) {
    if (r.n != x.n || r.c != x.c || r.h != 1 || r.w != 1)
        throw std::invalid_argument("divide_by_latent: latent shape mismatch");
    Tensor4 y = x;
    for (int b = 0; b < x.n; ++b)
        for (int j = 0; j < x.c; ++j) {
            const double inv = 1.0 / r.at(b, j, 0, 0);
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx) y.at(b, j, yy, xx) *= inv;
        }
    return y;
}

void divide_by_latent_backward(const Tensor4& gy, const Tensor4& x, const Tensor4& r, Tensor4& gx,
                               Tensor4& gr) {
    gx = Tensor4::zeros_like(x);
    gr = Tensor4::zeros_like(r);
    for (int b = 0; b < x.n; ++b)
        for (int j = 0; j < x.c; ++j) {
            const double rj = r.at(b, j, 0, 0);
            const double inv = 1.0 / rj;
            double acc = 0.0;
            for (int yy = 0; yy < x.h; ++yy)
                for (int xx = 0; xx < x.w; ++xx) {
                    const double g = gy.at(b, j, yy, xx);
                    gx.at(b, j, yy, xx) = g * inv;
                    acc += g * x.at(b, j, yy, xx);
                }
            gr.at(b, j, 0, 0) = -acc * inv * inv;
        }
}

double l1_loss(const Tensor4& pred, const Tensor4& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) acc += std::abs(pred.v[i] - target.v[i]);
    return acc / static_cast<double>(pred.v.size());
}

Tensor4 l1_loss_grad(const Tensor4& pred, const Tensor4& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("l1_loss_grad: shape mismatch");
    Tensor4 g = Tensor4::zeros_like(pred);
    const double inv = 1.0 / static_cast<double>(pred.v.size());
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double d = pred.v[i] - target.v[i];
        g.v[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return g;
}

void Adam::init(const std::vector<Param*>& params) {
    m.clear();
    v.clear();
    for (const Param* p : params) {
        m.push_back(Tensor4::zeros_like(p->value));
        v.push_back(Tensor4::zeros_like(p->value));
    }
    step_count = 0;
}

void Adam::step(std::vector<Param*>& params) {
    if (m.size() != params.size()) throw std::invalid_argument("Adam: not initialized");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t p = 0; p < params.size(); ++p) {
        Param& par = *params[p];
        if (!par.grad.same_shape(par.value)) throw std::invalid_argument("Adam: shape mismatch");
        for (size_t i = 0; i < par.value.v.size(); ++i) {
            const double g = par.grad.v[i];
            m[p].v[i] = beta1 * m[p].v[i] + (1.0 - beta1) * g;
            v[p].v[i] = beta2 * v[p].v[i] + (1.0 - beta2) * g * g;
            const double mhat = m[p].v[i] / bc1;
            const double vhat = v[p].v[i] / bc2;
            par.value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace cfpa
