#pragma once

#include <cstdint>
#include <optional>

#include "cfpa/image.hpp"

namespace cfpa {

// Normalized nonnegative square kernel with a center pixel (odd size).
// Holds the relay-lens response; radius is set when Airy-generated.
struct Psf {
    int size = 1;
    std::vector<double> kernel;  // size x size, row-major, unit sum
    std::optional<double> radius;

    double at(int r, int c) const { return kernel[static_cast<size_t>(r) * size + c]; }
    int center() const { return size / 2; }
};

// Discrete delta kernel (identity under convolution).
Psf delta_psf(int size = 1);

// Bessel function of the first kind, order 1. Power series for small
// arguments, Hankel asymptotic expansion beyond; absolute error <= 1e-10.
double bessel_j1(double t);

// Airy-disk intensity kernel: value(i,j) ~ [2 J1(t)/t]^2 with
// t = 3.8317059702 * rho / r, rho the distance to the center pixel, so the
// first intensity null falls at rho = r. Truncated to size x size and
// renormalized to unit sum.
Psf airy_psf(double radius, int size);

enum class ConvMethod { Auto, Direct, Fft };

// Same-size 2D convolution with zero padding. Direct spatial evaluation is
// the reference path; Auto switches to the FFT path for large kernel/image
// products (the two paths agree to 1e-9 relative).
Image convolve2d(const Image& img, const Psf& psf, ConvMethod method = ConvMethod::Auto);

// Circular (wrap-around) same-size convolution. Used by the deconvolution
// baselines where flux conservation matters.
Image convolve2d_circular(const Image& img, const Psf& psf);

// Each LR pixel is the mean of its s1 x s2 HR block (unit-sum box filter).
Image box_downsample(const Image& img, const SrFactor& sr);

// One multiplexed measurement: y = D(h_R * (mask .* x)) + n, with n i.i.d.
// Gaussian of std noise_sigma drawn from the given seed.
Image forward_measure(const Image& x, const Image& mask, const Psf& psf, const SrFactor& sr,
                      double noise_sigma, uint64_t rng_seed,
                      ConvMethod method = ConvMethod::Auto);

// Blur- and noise-free target measurement: y = D(mask .* x).
Image ideal_measure(const Image& x, const Image& mask, const SrFactor& sr);

}  // namespace cfpa
