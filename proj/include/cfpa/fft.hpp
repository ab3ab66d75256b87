#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cfpa {

// Minimal iterative radix-2 FFT, enough for the optional fast convolution
// path. Lengths must be powers of two; callers zero-pad.
namespace fft {

inline void transform(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: length not a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv;
    }
}

// In-place 2D FFT over a row-major rows x cols grid (both powers of two).
inline void transform2d(std::vector<std::complex<double>>& a, size_t rows, size_t cols,
                        bool inverse) {
    std::vector<std::complex<double>> tmp;
    for (size_t r = 0; r < rows; ++r) {
        tmp.assign(a.begin() + r * cols, a.begin() + (r + 1) * cols);
        transform(tmp, inverse);
        std::copy(tmp.begin(), tmp.end(), a.begin() + r * cols);
    }
    tmp.resize(rows);
    for (size_t c = 0; c < cols; ++c) {
        for (size_t r = 0; r < rows; ++r) tmp[r] = a[r * cols + c];
        transform(tmp, inverse);
        for (size_t r = 0; r < rows; ++r) a[r * cols + c] = tmp[r];
    }
}

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace fft
}  // namespace cfpa
