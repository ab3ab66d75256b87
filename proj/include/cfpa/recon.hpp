#pragma once

#include <functional>
#include <optional>
#include <string>

#include "cfpa/image.hpp"
#include "cfpa/sysmat.hpp"

namespace cfpa {

// Radial projection onto the l2 ball of radius epsilon centered at y.
Eigen::VectorXd prox_l2_ball(const Eigen::VectorXd& s, const Eigen::VectorXd& y, double epsilon);

// Named denoiser f(v; mu) plugged into the solver as the regularization
// proximal step. Output shape must equal input shape; deterministic.
struct DenoiserHandle {
    std::string name;
    std::function<Image(const Image&, double)> fn;
};

DenoiserHandle identity_denoiser();
DenoiserHandle tv_denoiser();
DenoiserHandle denoiser_from_string(const std::string& name);

// Isotropic TV proximal problem min_u 0.5||u-v||^2 + mu TV(u), solved by a
// dual projected-gradient scheme with a fixed number of inner iterations.
Image tv_denoise(const Image& v, double mu, int inner_iters = 50);

struct StoppingRule {
    int max_iter = 300;
    double tol = 1e-6;  // on primal residuals, relative to 1 + ||x||
};

// Matrix-form-agnostic view of the forward model. The referenced matrix must
// outlive the operator.
struct ForwardOperator {
    MeasurementGeometry geom;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply_transpose;
};

ForwardOperator make_operator(const DenseSystemMatrix& c);
ForwardOperator make_operator(const BlockDiagSystemMatrix& c);

// Solver state exposed to observers (iteration-level tests and diagnostics).
struct AdmmState {
    Eigen::VectorXd x;       // HR iterate
    Eigen::VectorXd z0, d0;  // measurement-space dual / multiplier
    Eigen::VectorXd z1, d1;  // image-space dual / multiplier
    int iteration = 0;
    double epsilon = 0.0;
    double mu = 0.0;
    double r0 = 0.0, r1 = 0.0;  // primal residual norms
};

struct PpfpaOptions {
    double epsilon = 0.0;
    double mu = 0.05;
    StoppingRule stop;
    // Default initialization is z0 = y, z1 = C^T y, d = 0; override for
    // warm starts and fixed-point tests.
    std::optional<Eigen::VectorXd> init_z1;
};

struct PpfpaTrace {
    int iterations = 0;
    double r0 = 0.0, r1 = 0.0;
    bool converged = false;
};

using IterObserver = std::function<void(const AdmmState&)>;

// Plug-and-play ADMM reconstruction. Iterates
//   x    <- (I + C^T C)^{-1} (C^T (z0 + d0) + z1 + d1)
//   z0   <- proj_{||.-y|| <= eps} (C x - d0)
//   z1   <- f_R(x - d1; mu)
//   d0   <- d0 + z0 - C x
//   d1   <- d1 + z1 - x
// until both primal residuals drop below tol * (1 + ||x||) or max_iter.
// The returned image is clamped to [0,1] at output only.
Image ppfpa(const ForwardOperator& c, const NormalInverse& normal_inv, const Eigen::VectorXd& y,
            const DenoiserHandle& denoiser, const PpfpaOptions& opt, PpfpaTrace* trace = nullptr,
            const IterObserver& observer = {});

// Default ball radius for a given noise level: multiplier * sigma * sqrt(mM).
double set_epsilon_from_noise(double sigma, int measurement_count, double multiplier = 1.0);

}  // namespace cfpa
