#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <memory>

#include "cfpa/aperture.hpp"
#include "cfpa/image.hpp"
#include "cfpa/optics.hpp"

namespace cfpa {

// Shared shape bookkeeping for measurement operators. Stacked measurement
// vectors are snapshot-major: entry i*M + k is LR pixel k of snapshot i.
struct MeasurementGeometry {
    int n1 = 0, n2 = 0;  // HR dims
    int m1 = 0, m2 = 0;  // LR dims
    int m = 0;           // snapshot count
    SrFactor sr;

    int n() const { return n1 * n2; }
    int lr_pixels() const { return m1 * m2; }
    int rows() const { return m * lr_pixels(); }
};

Eigen::VectorXd stack_measurements(const std::vector<Image>& ys);
std::vector<Image> unstack_measurements(const Eigen::VectorXd& y, const MeasurementGeometry& g);

// Explicit mM x N matrix of the blurred forward model. Column j equals the
// stacked noiseless forward_measure of basis image e_j.
struct DenseSystemMatrix {
    MeasurementGeometry geom;
    Eigen::MatrixXd mat;

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return mat * x; }
    Eigen::VectorXd apply_transpose(const Eigen::VectorXd& y) const {
        return mat.transpose() * y;
    }
};

// Blur-free forward model factored into M independent m x s blocks, one per
// LR pixel. Blocks are stored contiguously with an explicit HR index map.
struct BlockDiagSystemMatrix {
    MeasurementGeometry geom;
    std::vector<double> blocks;   // M blocks, each m x s row-major
    std::vector<int> hr_indices;  // M x s: flat HR index of each block slot

    double block_entry(int k, int i, int l) const {
        const int s = geom.sr.s();
        return blocks[(static_cast<size_t>(k) * geom.m + i) * s + l];
    }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
    Eigen::VectorXd apply_transpose(const Eigen::VectorXd& y) const;
};

// Cap mirroring the restriction under which explicit matrices stay tractable.
inline constexpr int kDefaultDenseCap = 3600;

// Probe the blurred forward model column by column. Equivalent to stacking
// forward_measure over all basis images (exploits that a basis image maps to
// a shifted copy of the kernel).
DenseSystemMatrix build_dense_row_probe(const SnapshotSchedule& schedule,
                                        const CodedAperture& aperture, const Psf& psf,
                                        const SrFactor& sr, int dense_cap = kDefaultDenseCap);

// Block-diagonal operator of the ideal (blur-free) model; integer shifts only.
BlockDiagSystemMatrix build_block_diag(const SnapshotSchedule& schedule,
                                       const CodedAperture& aperture, const SrFactor& sr);

// Factorization of (I + C^T C), applied as a solve. Per-block s x s Cholesky
// factors for block-diagonal C, one N x N factor for dense C.
class NormalInverse {
  public:
    explicit NormalInverse(const DenseSystemMatrix& c);
    explicit NormalInverse(const BlockDiagSystemMatrix& c);

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
    const MeasurementGeometry& geom() const { return geom_; }

  private:
    MeasurementGeometry geom_;
    bool block_diag_ = false;
    std::vector<int> hr_indices_;  // copied from the block-diagonal source
    std::vector<Eigen::LLT<Eigen::MatrixXd>> block_llt_;
    Eigen::LLT<Eigen::MatrixXd> dense_llt_;
};

// Ridge-regularized least squares (C^T C + lambda I) x = C^T y. The default
// lambda keeps under-determined blocks (m < s) well posed; lambda = 0 is
// allowed when every block is invertible.
Image least_squares_solve(const DenseSystemMatrix& c, const Eigen::VectorXd& y,
                          double lambda = 1e-6);
Image least_squares_solve(const BlockDiagSystemMatrix& c, const Eigen::VectorXd& y,
                          double lambda = 1e-6);

}  // namespace cfpa
