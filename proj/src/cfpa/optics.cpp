#include "cfpa/optics.hpp"

#include <cmath>

#include "cfpa/fft.hpp"
#include "cfpa/rng.hpp"

namespace cfpa {

namespace {

// First zero of J1; the Airy intensity null location in argument units.
constexpr double kJ1FirstZero = 3.8317059702;

// Power series J1(t) = (t/2) sum_k (-1)^k (t^2/4)^k / (k! (k+1)!).
// Accurate for |t| below ~14; cancellation grows with t beyond that.
double j1_series(double t) {
    const double x = 0.25 * t * t;
    double term = 0.5 * t;
    double sum = term;
    for (int k = 1; k <= 60; ++k) {
        term *= -x / (static_cast<double>(k) * (k + 1));
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum) + 1e-300) break;
    }
    return sum;
}

// Hankel asymptotic expansion for order 1:
//   J1(t) = sqrt(2/(pi t)) [P(t) cos(w) - Q(t) sin(w)],  w = t - 3 pi/4,
// with P/Q polynomials in 1/(8t). Terms are added while they shrink, which
// reaches the optimal truncation error (< 1e-11 absolute for t >= 12).
double j1_asymptotic(double t) {
    const double mu = 4.0;  // 4 * nu^2 for nu = 1
    const double inv8t = 1.0 / (8.0 * t);
    double p = 1.0, q = 0.0;
    double term = 1.0;
    double prev = std::abs(term);
    for (int k = 1; k <= 30; ++k) {
        const double odd = 2.0 * k - 1.0;
        term *= (mu - odd * odd) / static_cast<double>(k) * inv8t;
        if (std::abs(term) >= prev) break;
        prev = std::abs(term);
        if (k % 2 == 1) {
            q += (k % 4 == 1) ? term : -term;
        } else {
            p += (k % 4 == 2) ? -term : term;
        }
    }
    const double w = t - 0.75 * M_PI;
    return std::sqrt(2.0 / (M_PI * t)) * (p * std::cos(w) - q * std::sin(w));
}

}  // namespace

double bessel_j1(double t) {
    const double a = std::abs(t);
    // Split at 12: series cancellation stays ~1e-11 there, and the
    // asymptotic truncation error has already dropped below 1e-10.
    const double v = (a < 12.0) ? j1_series(a) : j1_asymptotic(a);
    return t < 0.0 ? -v : v;
}

Psf delta_psf(int size) {
    if (size < 1 || size % 2 == 0) throw std::invalid_argument("delta_psf: size must be odd");
    Psf p;
    p.size = size;
    p.kernel.assign(static_cast<size_t>(size) * size, 0.0);
    p.kernel[static_cast<size_t>(size / 2) * size + size / 2] = 1.0;
    return p;
}

Psf airy_psf(double radius, int size) {
    if (radius <= 0.0) throw std::invalid_argument("airy_psf: radius must be > 0");
    if (size < 3 || size % 2 == 0) throw std::invalid_argument("airy_psf: size must be odd, >= 3");

    Psf p;
    p.size = size;
    p.radius = radius;
    p.kernel.assign(static_cast<size_t>(size) * size, 0.0);

    const int c = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            const double rho = std::hypot(static_cast<double>(i - c), static_cast<double>(j - c));
            const double t = kJ1FirstZero * rho / radius;
            double v;
            if (t == 0.0) {
                v = 1.0;  // lim 2 J1(t)/t = 1
            } else {
                const double amp = 2.0 * bessel_j1(t) / t;
                v = amp * amp;
            }
            p.kernel[static_cast<size_t>(i) * size + j] = v;
            sum += v;
        }
    }
    // Renormalize so the truncated kernel sums to exactly 1.
    for (auto& v : p.kernel) v /= sum;
    return p;
}

namespace {

void check_psf(const Psf& psf) {
    if (psf.size < 1 || psf.size % 2 == 0) throw std::invalid_argument("psf: size must be odd");
    if (psf.kernel.size() != static_cast<size_t>(psf.size) * psf.size)
        throw std::invalid_argument("psf: kernel size mismatch");
    double sum = 0.0;
    for (double v : psf.kernel) {
        if (v < 0.0) throw std::invalid_argument("psf: negative entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("psf: kernel must sum to 1");
}

Image convolve2d_direct(const Image& img, const Psf& psf) {
    Image out(img.rows, img.cols);
    const int c = psf.center();
    for (int i = 0; i < img.rows; ++i) {
        for (int j = 0; j < img.cols; ++j) {
            double acc = 0.0;
            const int u_lo = std::max(-c, i - (img.rows - 1));
            const int u_hi = std::min(c, i);
            const int v_lo = std::max(-c, j - (img.cols - 1));
            const int v_hi = std::min(c, j);
            for (int u = u_lo; u <= u_hi; ++u)
                for (int v = v_lo; v <= v_hi; ++v)
                    acc += psf.at(c + u, c + v) * img(i - u, j - v);
            out(i, j) = acc;
        }
    }
    return out;
}

Image convolve2d_fft(const Image& img, const Psf& psf) {
    const int c = psf.center();
    const size_t rows = fft::next_pow2(static_cast<size_t>(img.rows) + psf.size - 1);
    const size_t cols = fft::next_pow2(static_cast<size_t>(img.cols) + psf.size - 1);
    std::vector<std::complex<double>> a(rows * cols), b(rows * cols);
    for (int i = 0; i < img.rows; ++i)
        for (int j = 0; j < img.cols; ++j) a[static_cast<size_t>(i) * cols + j] = img(i, j);
    for (int i = 0; i < psf.size; ++i)
        for (int j = 0; j < psf.size; ++j) b[static_cast<size_t>(i) * cols + j] = psf.at(i, j);
    fft::transform2d(a, rows, cols, false);
    fft::transform2d(b, rows, cols, false);
    for (size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
    fft::transform2d(a, rows, cols, true);
    // Full linear convolution sits at offset (c, c) for the same-size crop.
    Image out(img.rows, img.cols);
    for (int i = 0; i < img.rows; ++i)
        for (int j = 0; j < img.cols; ++j)
            out(i, j) = a[static_cast<size_t>(i + c) * cols + (j + c)].real();
    return out;
}

}  // namespace

Image convolve2d(const Image& img, const Psf& psf, ConvMethod method) {
    check_psf(psf);
    if (method == ConvMethod::Auto) {
        // Direct work is N1*N2*K^2 multiply-adds; switch once the FFT's
        // n log n factor wins clearly.
        const double direct_ops = static_cast<double>(img.rows) * img.cols *
                                  static_cast<double>(psf.size) * psf.size;
        method = (direct_ops > 4.0e8) ? ConvMethod::Fft : ConvMethod::Direct;
    }
    return method == ConvMethod::Fft ? convolve2d_fft(img, psf) : convolve2d_direct(img, psf);
}

Image convolve2d_circular(const Image& img, const Psf& psf) {
    check_psf(psf);
    Image out(img.rows, img.cols);
    const int c = psf.center();
    for (int i = 0; i < img.rows; ++i) {
        for (int j = 0; j < img.cols; ++j) {
            double acc = 0.0;
            for (int u = -c; u <= c; ++u) {
                const int r = ((i - u) % img.rows + img.rows) % img.rows;
                for (int v = -c; v <= c; ++v) {
                    const int q = ((j - v) % img.cols + img.cols) % img.cols;
                    acc += psf.at(c + u, c + v) * img(r, q);
                }
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Image box_downsample(const Image& img, const SrFactor& sr) {
    require_divisible(img, sr, "box_downsample");
    const int m1 = img.rows / sr.s1;
    const int m2 = img.cols / sr.s2;
    const double w = 1.0 / static_cast<double>(sr.s());
    Image out(m1, m2);
    for (int i = 0; i < m1; ++i) {
        for (int j = 0; j < m2; ++j) {
            double acc = 0.0;
            for (int a = 0; a < sr.s1; ++a)
                for (int b = 0; b < sr.s2; ++b) acc += img(i * sr.s1 + a, j * sr.s2 + b);
            out(i, j) = acc * w;
        }
    }
    return out;
}

Image forward_measure(const Image& x, const Image& mask, const Psf& psf, const SrFactor& sr,
                      double noise_sigma, uint64_t rng_seed, ConvMethod method) {
    require_same_shape(x, mask, "forward_measure");
    if (noise_sigma < 0.0) throw std::invalid_argument("forward_measure: noise_sigma < 0");
    Image y = box_downsample(convolve2d(hadamard(mask, x), psf, method), sr);
    if (noise_sigma > 0.0) {
        Rng rng(rng_seed);
        for (auto& v : y.data) v += rng.normal(0.0, noise_sigma);
    }
    return y;
}

Image ideal_measure(const Image& x, const Image& mask, const SrFactor& sr) {
    require_same_shape(x, mask, "ideal_measure");
    return box_downsample(hadamard(mask, x), sr);
}

}  // namespace cfpa
