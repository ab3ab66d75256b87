#pragma once

#include <cstdint>
#include <vector>

#include "cfpa/rng.hpp"

namespace cfpa {

// Batched 4-D tensor (batch, channels, height, width), row-major doubles.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {}

    double& at(int i, int j, int y, int x) {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }
    double at(int i, int j, int y, int x) const {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }
    size_t size() const { return v.size(); }
    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    static Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.n, t.c, t.h, t.w); }
};

// Learnable tensor plus its gradient accumulator.
struct Param {
    Tensor4 value;
    Tensor4 grad;

    void resize(int n, int c, int h, int w) {
        value = Tensor4(n, c, h, w);
        grad = Tensor4(n, c, h, w);
    }
    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

// 2D convolution, square kernel, zero padding. Caches its input for backward.
struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3, stride_y = 1, stride_x = 1, pad = 1;
    Param weight;  // (out_ch, in_ch, k, k)
    Param bias;    // (1, out_ch, 1, 1)

    void configure(int in, int out, int k = 3, int sy = 1, int sx = 1, int padding = 1);
    void init_kaiming(Rng& rng);
    void init_zero();
    Tensor4 forward(const Tensor4& x);
    Tensor4 backward(const Tensor4& gy);

    Tensor4 cached_x;
};

// Per-channel batch normalization; momentum 0.1 running statistics, eps 1e-5.
// Training normalizes with biased batch variance; eval uses running stats.
struct BatchNorm2d {
    int ch = 0;
    double momentum = 0.1;
    double eps = 1e-5;
    Param gamma, beta;
    Tensor4 running_mean, running_var;  // (1, ch, 1, 1)

    void configure(int channels);
    Tensor4 forward(const Tensor4& x, bool train);
    Tensor4 backward(const Tensor4& gy);  // train-mode path

    Tensor4 cached_xhat;
    std::vector<double> cached_istd;
    int cached_count = 0;
};

struct LeakyReLU {
    double slope = 0.01;
    Tensor4 forward(const Tensor4& x);
    Tensor4 backward(const Tensor4& gy) const;
    Tensor4 cached_x;
};

// Fully connected layer on (B, features, 1, 1) tensors.
struct Linear {
    int in_f = 0, out_f = 0;
    Param weight;  // (1, out_f * in_f, 1, 1) flattened row-major (out, in)
    Param bias;    // (1, out_f, 1, 1)

    void configure(int in, int out);
    void init_kaiming(Rng& rng);
    Tensor4 forward(const Tensor4& x);
    Tensor4 backward(const Tensor4& gy);

    Tensor4 cached_x;
};

// softplus(x) + floor, elementwise; keeps divisors strictly positive.
struct SoftplusFloor {
    double floor = 1e-3;
    Tensor4 forward(const Tensor4& x);
    Tensor4 backward(const Tensor4& gy) const;
    Tensor4 cached_x;
};

// (B, C, H, W) -> (B, C*s1*s2, H/s1, W/s2); block (a,b) of channel c lands in
// output channel c*s1*s2 + a*s2 + b. pixel_shuffle is the exact inverse.
Tensor4 pixel_unshuffle(const Tensor4& x, int s1, int s2);
Tensor4 pixel_shuffle(const Tensor4& x, int s1, int s2);

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
void split_channels(const Tensor4& g, int c_first, Tensor4& ga, Tensor4& gb);

// out[b,c,y,x] = x[b,c,y,x] / r[b,c]; gradients for both operands.
Tensor4 divide_by_latent(const Tensor4& x, const Tensor4& r);
void divide_by_latent_backward(const Tensor4& gy, const Tensor4& x, const Tensor4& r,
                               Tensor4& gx, Tensor4& gr);

// Mean absolute error; subgradient at 0 taken as 0.
double l1_loss(const Tensor4& pred, const Tensor4& target);
Tensor4 l1_loss_grad(const Tensor4& pred, const Tensor4& target);

// Standard Adam with per-epoch learning-rate decay.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double epoch_decay = 0.999;
    int64_t step_count = 0;
    std::vector<Tensor4> m, v;

    void init(const std::vector<Param*>& params);
    void step(std::vector<Param*>& params);
    void epoch_end() { lr *= epoch_decay; }
};

}  // namespace cfpa
