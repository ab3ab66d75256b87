#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cfpa/image.hpp"

namespace cfpa {

// Corner alignment markers, 3x3 LR pixels each: center LR pixel fully
// transparent, surrounding ring fully opaque (expanded to HR blocks).
struct MarkerSpec {
    int lr_size = 3;
};

// Binary HR mask (1 = transparent, 0 = opaque) with per-block open count
// round(p * s1 * s2) outside marker regions.
struct CodedAperture {
    Image base;  // entries 0/1
    SrFactor sr;
    double open_ratio = 0.8;
    std::optional<MarkerSpec> markers;
};

// Ordered piezo-stage shifts in HR pixels; first entry is (0,0).
struct SnapshotSchedule {
    struct Shift {
        double dx = 0.0;
        double dy = 0.0;
        bool operator==(const Shift&) const = default;
    };
    std::vector<Shift> shifts;

    int count() const { return static_cast<int>(shifts.size()); }
};

enum class ShiftMode { Integer, Fractional };

// Random per-block pattern: exactly round(p * s1 * s2) transparent pixels in
// every s1 x s2 block, chosen independently per block from the seed.
CodedAperture generate_aperture(int n1, int n2, int s1, int s2, double open_ratio,
                                uint64_t rng_seed);

// Periodic pattern: one s1 x s2 tile repeated across the mask. The tile is
// picked from seeded random draws to maximize the smallest non-DC 2D DFT
// magnitude, which makes every m = s block of the shifted-mask system a
// well-conditioned circulant. Intended for determined-system recovery work;
// the per-block random pattern above is the imaging default.
CodedAperture generate_tiled_aperture(int n1, int n2, int s1, int s2, double open_ratio,
                                      uint64_t rng_seed, int search_trials = 20000);

// Overwrite the four corner marker regions; the rest of the mask is untouched.
CodedAperture apply_markers(const CodedAperture& ap, const MarkerSpec& spec);

// Mask for one snapshot. Integer mode: circular shift of the base pattern.
// Fractional mode: bilinear interpolation of the binary mask (values in
// [0,1]); only used by the misalignment studies, |dx|,|dy| <= 2.
Image shift_mask(const CodedAperture& ap, double dx, double dy,
                 ShiftMode mode = ShiftMode::Integer);

// Row-major raster of ceil(sqrt(m)) x ceil(sqrt(m)) single-pixel steps,
// truncated to m entries.
SnapshotSchedule raster_schedule(int m);

}  // namespace cfpa
