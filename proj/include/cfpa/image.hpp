#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfpa {

// Dense 2D intensity grid, row-major doubles. Used for both HR scenes and
// LR measurements; scene values live in [0,1], intermediate images may not.
struct Image {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Image() = default;
    Image(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r < 1 || c < 1) throw std::invalid_argument("Image: dims must be >= 1");
    }

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const { return rows == o.rows && cols == o.cols; }
};

// Super-resolution factor: each LR pixel covers an s1 x s2 block of HR pixels.
struct SrFactor {
    int s1 = 1;
    int s2 = 1;

    SrFactor() = default;
    SrFactor(int a, int b) : s1(a), s2(b) {
        if (a < 1 || b < 1) throw std::invalid_argument("SrFactor: factors must be >= 1");
    }
    int s() const { return s1 * s2; }
};

inline void require_same_shape(const Image& a, const Image& b, const std::string& what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(what + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " vs " + std::to_string(b.rows) +
                                    "x" + std::to_string(b.cols) + ")");
}

inline void require_divisible(const Image& img, const SrFactor& sr, const std::string& what) {
    if (img.rows % sr.s1 != 0 || img.cols % sr.s2 != 0)
        throw std::invalid_argument(what + ": image " + std::to_string(img.rows) + "x" +
                                    std::to_string(img.cols) + " not divisible by block " +
                                    std::to_string(sr.s1) + "x" + std::to_string(sr.s2));
}

inline Image hadamard(const Image& a, const Image& b) {
    require_same_shape(a, b, "hadamard");
    Image out(a.rows, a.cols);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

}  // namespace cfpa
