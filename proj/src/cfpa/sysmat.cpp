#include "cfpa/sysmat.hpp"

#include <cmath>

namespace cfpa {

namespace {

MeasurementGeometry make_geometry(const CodedAperture& aperture, const SrFactor& sr, int m) {
    MeasurementGeometry g;
    g.n1 = aperture.base.rows;
    g.n2 = aperture.base.cols;
    if (g.n1 % sr.s1 != 0 || g.n2 % sr.s2 != 0)
        throw std::invalid_argument("system matrix: aperture dims not divisible by block");
    g.m1 = g.n1 / sr.s1;
    g.m2 = g.n2 / sr.s2;
    g.m = m;
    g.sr = sr;
    return g;
}

}  // namespace

Eigen::VectorXd stack_measurements(const std::vector<Image>& ys) {
    if (ys.empty()) throw std::invalid_argument("stack_measurements: empty");
    const size_t plane = ys[0].size();
    Eigen::VectorXd out(static_cast<Eigen::Index>(plane * ys.size()));
    for (size_t i = 0; i < ys.size(); ++i) {
        if (!ys[i].same_shape(ys[0]))
            throw std::invalid_argument("stack_measurements: ragged stack");
        for (size_t k = 0; k < plane; ++k)
            out[static_cast<Eigen::Index>(i * plane + k)] = ys[i].data[k];
    }
    return out;
}

std::vector<Image> unstack_measurements(const Eigen::VectorXd& y, const MeasurementGeometry& g) {
    if (y.size() != g.rows()) throw std::invalid_argument("unstack_measurements: length mismatch");
    std::vector<Image> out;
    out.reserve(g.m);
    for (int i = 0; i < g.m; ++i) {
        Image img(g.m1, g.m2);
        for (int k = 0; k < g.lr_pixels(); ++k) img.data[k] = y[i * g.lr_pixels() + k];
        out.push_back(std::move(img));
    }
    return out;
}

DenseSystemMatrix build_dense_row_probe(const SnapshotSchedule& schedule,
                                        const CodedAperture& aperture, const Psf& psf,
                                        const SrFactor& sr, int dense_cap) {
    DenseSystemMatrix sys;
    sys.geom = make_geometry(aperture, sr, schedule.count());
    if (sys.geom.n() > dense_cap)
        throw std::invalid_argument("build_dense_row_probe: N = " + std::to_string(sys.geom.n()) +
                                    " exceeds dense cap " + std::to_string(dense_cap));
    const auto& g = sys.geom;
    sys.mat = Eigen::MatrixXd::Zero(g.rows(), g.n());

    const int c = psf.center();
    const double w = 1.0 / static_cast<double>(sr.s());
    for (int i = 0; i < g.m; ++i) {
        const Image mask = shift_mask(aperture, schedule.shifts[i].dx, schedule.shifts[i].dy);
        for (int jr = 0; jr < g.n1; ++jr) {
            for (int jc = 0; jc < g.n2; ++jc) {
                const double lam = mask(jr, jc);
                if (lam == 0.0) continue;
                const int j = jr * g.n2 + jc;
                // Basis image e_j convolves to the kernel centered at j;
                // accumulate its box average into the LR rows it touches.
                const int p_lo = std::max(0, jr - c), p_hi = std::min(g.n1 - 1, jr + c);
                const int q_lo = std::max(0, jc - c), q_hi = std::min(g.n2 - 1, jc + c);
                for (int p = p_lo; p <= p_hi; ++p) {
                    const int u = p / sr.s1;
                    for (int q = q_lo; q <= q_hi; ++q) {
                        const int v = q / sr.s2;
                        const double h = psf.at(c + p - jr, c + q - jc);
                        sys.mat(i * g.lr_pixels() + u * g.m2 + v, j) += lam * w * h;
                    }
                }
            }
        }
    }
    return sys;
}

BlockDiagSystemMatrix build_block_diag(const SnapshotSchedule& schedule,
                                       const CodedAperture& aperture, const SrFactor& sr) {
    BlockDiagSystemMatrix sys;
    sys.geom = make_geometry(aperture, sr, schedule.count());
    const auto& g = sys.geom;
    const int s = sr.s();
    sys.blocks.assign(static_cast<size_t>(g.lr_pixels()) * g.m * s, 0.0);
    sys.hr_indices.assign(static_cast<size_t>(g.lr_pixels()) * s, 0);

    for (int k = 0; k < g.lr_pixels(); ++k) {
        const int kr = k / g.m2, kc = k % g.m2;
        for (int l = 0; l < s; ++l) {
            const int r = kr * sr.s1 + l / sr.s2;
            const int ccol = kc * sr.s2 + l % sr.s2;
            sys.hr_indices[static_cast<size_t>(k) * s + l] = r * g.n2 + ccol;
        }
    }

    const double w = 1.0 / static_cast<double>(s);
    for (int i = 0; i < g.m; ++i) {
        const auto& sh = schedule.shifts[i];
        if (sh.dx != std::round(sh.dx) || sh.dy != std::round(sh.dy))
            throw std::invalid_argument("build_block_diag: integer shifts only");
        const Image mask = shift_mask(aperture, sh.dx, sh.dy);
        for (int k = 0; k < g.lr_pixels(); ++k) {
            for (int l = 0; l < s; ++l) {
                const int hr = sys.hr_indices[static_cast<size_t>(k) * s + l];
                sys.blocks[(static_cast<size_t>(k) * g.m + i) * s + l] = w * mask.data[hr];
            }
        }
    }
    return sys;
}

Eigen::VectorXd BlockDiagSystemMatrix::apply(const Eigen::VectorXd& x) const {
    if (x.size() != geom.n()) throw std::invalid_argument("block apply: length mismatch");
    const int s = geom.sr.s();
    const int lr = geom.lr_pixels();
    Eigen::VectorXd y = Eigen::VectorXd::Zero(geom.rows());
    for (int k = 0; k < lr; ++k) {
        const int* idx = &hr_indices[static_cast<size_t>(k) * s];
        const double* bk = &blocks[static_cast<size_t>(k) * geom.m * s];
        for (int i = 0; i < geom.m; ++i) {
            double acc = 0.0;
            const double* row = bk + static_cast<size_t>(i) * s;
            for (int l = 0; l < s; ++l) acc += row[l] * x[idx[l]];
            y[i * lr + k] = acc;
        }
    }
    return y;
}

Eigen::VectorXd BlockDiagSystemMatrix::apply_transpose(const Eigen::VectorXd& y) const {
    if (y.size() != geom.rows())
        throw std::invalid_argument("block apply_transpose: length mismatch");
    const int s = geom.sr.s();
    const int lr = geom.lr_pixels();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(geom.n());
    for (int k = 0; k < lr; ++k) {
        const int* idx = &hr_indices[static_cast<size_t>(k) * s];
        const double* bk = &blocks[static_cast<size_t>(k) * geom.m * s];
        for (int i = 0; i < geom.m; ++i) {
            const double yi = y[i * lr + k];
            const double* row = bk + static_cast<size_t>(i) * s;
            for (int l = 0; l < s; ++l) x[idx[l]] += row[l] * yi;
        }
    }
    return x;
}

NormalInverse::NormalInverse(const DenseSystemMatrix& c) : geom_(c.geom), block_diag_(false) {
    Eigen::MatrixXd gram =
        Eigen::MatrixXd::Identity(geom_.n(), geom_.n()) + c.mat.transpose() * c.mat;
    dense_llt_.compute(gram);
    if (dense_llt_.info() != Eigen::Success)
        throw std::runtime_error("NormalInverse: dense Cholesky failed");
}

NormalInverse::NormalInverse(const BlockDiagSystemMatrix& c)
    : geom_(c.geom), block_diag_(true), hr_indices_(c.hr_indices) {
    const int s = geom_.sr.s();
    block_llt_.reserve(geom_.lr_pixels());
    for (int k = 0; k < geom_.lr_pixels(); ++k) {
        Eigen::MatrixXd bk(geom_.m, s);
        for (int i = 0; i < geom_.m; ++i)
            for (int l = 0; l < s; ++l) bk(i, l) = c.block_entry(k, i, l);
        Eigen::MatrixXd gram = Eigen::MatrixXd::Identity(s, s) + bk.transpose() * bk;
        block_llt_.emplace_back(gram);
        if (block_llt_.back().info() != Eigen::Success)
            throw std::runtime_error("NormalInverse: block Cholesky failed");
    }
}

Eigen::VectorXd NormalInverse::apply(const Eigen::VectorXd& v) const {
    if (v.size() != geom_.n()) throw std::invalid_argument("NormalInverse::apply: length");
    if (!block_diag_) return dense_llt_.solve(v);
    const int s = geom_.sr.s();
    Eigen::VectorXd out(geom_.n());
    Eigen::VectorXd local(s);
    for (int k = 0; k < geom_.lr_pixels(); ++k) {
        const int* idx = &hr_indices_[static_cast<size_t>(k) * s];
        for (int l = 0; l < s; ++l) local[l] = v[idx[l]];
        local = block_llt_[k].solve(local);
        for (int l = 0; l < s; ++l) out[idx[l]] = local[l];
    }
    return out;
}

namespace {

Image vector_to_image(const Eigen::VectorXd& x, const MeasurementGeometry& g) {
    Image img(g.n1, g.n2);
    for (int i = 0; i < g.n(); ++i) img.data[i] = x[i];
    return img;
}

}  // namespace

Image least_squares_solve(const DenseSystemMatrix& c, const Eigen::VectorXd& y, double lambda) {
    if (y.size() != c.geom.rows()) throw std::invalid_argument("least_squares_solve: length");
    if (lambda < 0.0) throw std::invalid_argument("least_squares_solve: ridge must be >= 0");
    Eigen::MatrixXd gram = c.mat.transpose() * c.mat;
    gram.diagonal().array() += lambda;
    Eigen::VectorXd x = gram.ldlt().solve(c.mat.transpose() * y);
    return vector_to_image(x, c.geom);
}

Image least_squares_solve(const BlockDiagSystemMatrix& c, const Eigen::VectorXd& y,
                          double lambda) {
    if (y.size() != c.geom.rows()) throw std::invalid_argument("least_squares_solve: length");
    if (lambda < 0.0) throw std::invalid_argument("least_squares_solve: ridge must be >= 0");
    const auto& g = c.geom;
    const int s = g.sr.s();
    const int lr = g.lr_pixels();
    Eigen::VectorXd x(g.n());
    Eigen::MatrixXd bk(g.m, s);
    Eigen::VectorXd yk(g.m);
    for (int k = 0; k < lr; ++k) {
        for (int i = 0; i < g.m; ++i) {
            yk[i] = y[i * lr + k];
            for (int l = 0; l < s; ++l) bk(i, l) = c.block_entry(k, i, l);
        }
        Eigen::MatrixXd gram = bk.transpose() * bk;
        gram.diagonal().array() += lambda;
        Eigen::VectorXd xk = gram.ldlt().solve(bk.transpose() * yk);
        const int* idx = &c.hr_indices[static_cast<size_t>(k) * s];
        for (int l = 0; l < s; ++l) x[idx[l]] = xk[l];
    }
    return vector_to_image(x, c.geom);
}

}  // namespace cfpa
