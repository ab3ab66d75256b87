#include "cfpa/aperture.hpp"

#include <cmath>

#include "cfpa/rng.hpp"

namespace cfpa {

CodedAperture generate_aperture(int n1, int n2, int s1, int s2, double open_ratio,
                                uint64_t rng_seed) {
    SrFactor sr(s1, s2);
    if (n1 < s1 || n2 < s2 || n1 % s1 != 0 || n2 % s2 != 0)
        throw std::invalid_argument("generate_aperture: mask dims must be multiples of the block");
    if (open_ratio <= 0.0 || open_ratio > 1.0)
        throw std::invalid_argument("generate_aperture: open ratio must be in (0,1]");
    const double exact = open_ratio * sr.s();
    const int count = static_cast<int>(std::lround(exact));
    if (std::abs(exact - count) >= 0.5 - 1e-9)
        throw std::invalid_argument("generate_aperture: open_ratio * s1 * s2 is not near-integer");

    CodedAperture ap;
    ap.sr = sr;
    ap.open_ratio = open_ratio;
    ap.base = Image(n1, n2, 0.0);

    Rng rng(rng_seed);
    std::vector<int> cells(static_cast<size_t>(sr.s()));
    for (int br = 0; br < n1 / s1; ++br) {
        for (int bc = 0; bc < n2 / s2; ++bc) {
            for (int i = 0; i < sr.s(); ++i) cells[i] = i;
            // Partial Fisher-Yates: the first `count` entries are the
            // transparent cells of this block.
            for (int i = 0; i < count; ++i) {
                const int j = i + static_cast<int>(rng.uniform_int(sr.s() - i));
                std::swap(cells[i], cells[j]);
                const int r = br * s1 + cells[i] / s2;
                const int c = bc * s2 + cells[i] % s2;
                ap.base(r, c) = 1.0;
            }
        }
    }
    return ap;
}

namespace {

// Smallest non-DC magnitude of the 2D DFT of an s1 x s2 tile. Equals s times
// the smallest nontrivial singular value of the circulant block the tile
// induces under a full shift raster.
double min_nondc_dft(const std::vector<double>& tile, int s1, int s2) {
    double min_mag = std::numeric_limits<double>::infinity();
    for (int u = 0; u < s1; ++u) {
        for (int v = 0; v < s2; ++v) {
            if (u == 0 && v == 0) continue;
            double re = 0.0, im = 0.0;
            for (int a = 0; a < s1; ++a)
                for (int b = 0; b < s2; ++b) {
                    const double ang =
                        -2.0 * M_PI * (static_cast<double>(u) * a / s1 +
                                       static_cast<double>(v) * b / s2);
                    const double t = tile[static_cast<size_t>(a) * s2 + b];
                    re += t * std::cos(ang);
                    im += t * std::sin(ang);
                }
            min_mag = std::min(min_mag, std::hypot(re, im));
        }
    }
    return min_mag;
}

}  // namespace

CodedAperture generate_tiled_aperture(int n1, int n2, int s1, int s2, double open_ratio,
                                      uint64_t rng_seed, int search_trials) {
    SrFactor sr(s1, s2);
    if (n1 < s1 || n2 < s2 || n1 % s1 != 0 || n2 % s2 != 0)
        throw std::invalid_argument("generate_tiled_aperture: dims must be block multiples");
    if (open_ratio <= 0.0 || open_ratio > 1.0)
        throw std::invalid_argument("generate_tiled_aperture: open ratio must be in (0,1]");
    const double exact = open_ratio * sr.s();
    const int count = static_cast<int>(std::lround(exact));
    if (std::abs(exact - count) >= 0.5 - 1e-9)
        throw std::invalid_argument("generate_tiled_aperture: open count not near-integer");
    if (search_trials < 1) throw std::invalid_argument("generate_tiled_aperture: trials >= 1");

    Rng rng(derive_seed(rng_seed, 0x711E));
    std::vector<int> cells(static_cast<size_t>(sr.s()));
    std::vector<double> tile(static_cast<size_t>(sr.s()));
    std::vector<double> best_tile;
    double best_score = -1.0;
    for (int trial = 0; trial < search_trials; ++trial) {
        for (int i = 0; i < sr.s(); ++i) cells[i] = i;
        std::fill(tile.begin(), tile.end(), 0.0);
        for (int i = 0; i < count; ++i) {
            const int j = i + static_cast<int>(rng.uniform_int(sr.s() - i));
            std::swap(cells[i], cells[j]);
            tile[cells[i]] = 1.0;
        }
        const double score = min_nondc_dft(tile, s1, s2);
        if (score > best_score) {
            best_score = score;
            best_tile = tile;
        }
    }

    CodedAperture ap;
    ap.sr = sr;
    ap.open_ratio = open_ratio;
    ap.base = Image(n1, n2, 0.0);
    for (int r = 0; r < n1; ++r)
        for (int c = 0; c < n2; ++c)
            ap.base(r, c) = best_tile[static_cast<size_t>(r % s1) * s2 + (c % s2)];
    return ap;
}

CodedAperture apply_markers(const CodedAperture& ap, const MarkerSpec& spec) {
    const int mh = spec.lr_size * ap.sr.s1;  // marker height in HR pixels
    const int mw = spec.lr_size * ap.sr.s2;
    if (ap.base.rows < 2 * mh || ap.base.cols < 2 * mw)
        throw std::invalid_argument("apply_markers: mask too small for four corner markers");

    CodedAperture out = ap;
    out.markers = spec;
    const int corners[4][2] = {{0, 0},
                               {0, ap.base.cols - mw},
                               {ap.base.rows - mh, 0},
                               {ap.base.rows - mh, ap.base.cols - mw}};
    for (auto& corner : corners) {
        for (int r = 0; r < mh; ++r) {
            for (int c = 0; c < mw; ++c) {
                const int lr = r / ap.sr.s1;  // LR cell within the marker
                const int lc = c / ap.sr.s2;
                const bool center = (lr == spec.lr_size / 2 && lc == spec.lr_size / 2);
                out.base(corner[0] + r, corner[1] + c) = center ? 1.0 : 0.0;
            }
        }
    }
    return out;
}

namespace {

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

Image shift_integer(const Image& base, int dx, int dy) {
    Image out(base.rows, base.cols);
    for (int r = 0; r < base.rows; ++r)
        for (int c = 0; c < base.cols; ++c)
            out(r, c) = base(wrap(r - dy, base.rows), wrap(c - dx, base.cols));
    return out;
}

// Bilinear sample of the circularly extended mask at (r - dy, c - dx).
Image shift_fractional(const Image& base, double dx, double dy) {
    Image out(base.rows, base.cols);
    for (int r = 0; r < base.rows; ++r) {
        const double sr = r - dy;
        const int r0 = static_cast<int>(std::floor(sr));
        const double fr = sr - r0;
        for (int c = 0; c < base.cols; ++c) {
            const double sc = c - dx;
            const int c0 = static_cast<int>(std::floor(sc));
            const double fc = sc - c0;
            const double v00 = base(wrap(r0, base.rows), wrap(c0, base.cols));
            const double v01 = base(wrap(r0, base.rows), wrap(c0 + 1, base.cols));
            const double v10 = base(wrap(r0 + 1, base.rows), wrap(c0, base.cols));
            const double v11 = base(wrap(r0 + 1, base.rows), wrap(c0 + 1, base.cols));
            out(r, c) = (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11);
        }
    }
    return out;
}

}  // namespace

Image shift_mask(const CodedAperture& ap, double dx, double dy, ShiftMode mode) {
    if (mode == ShiftMode::Integer) {
        const double rx = std::round(dx), ry = std::round(dy);
        if (dx != rx || dy != ry)
            throw std::invalid_argument("shift_mask: integer mode requires integral shifts");
        return shift_integer(ap.base, static_cast<int>(rx), static_cast<int>(ry));
    }
    if (std::abs(dx) > 2.0 || std::abs(dy) > 2.0)
        throw std::invalid_argument("shift_mask: fractional shifts limited to |d| <= 2");
    return shift_fractional(ap.base, dx, dy);
}

SnapshotSchedule raster_schedule(int m) {
    if (m < 1) throw std::invalid_argument("raster_schedule: m must be >= 1");
    const int w = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));
    SnapshotSchedule sched;
    sched.shifts.reserve(m);
    for (int k = 0; k < m; ++k)
        sched.shifts.push_back({static_cast<double>(k % w), static_cast<double>(k / w)});
    return sched;
}

}  // namespace cfpa
