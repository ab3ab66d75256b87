#include "cfpa/recon.hpp"

#include <cmath>

namespace cfpa {

Eigen::VectorXd prox_l2_ball(const Eigen::VectorXd& s, const Eigen::VectorXd& y, double epsilon) {
    if (s.size() != y.size()) throw std::invalid_argument("prox_l2_ball: shape mismatch");
    if (epsilon < 0.0) throw std::invalid_argument("prox_l2_ball: epsilon must be >= 0");
    const double dist = (s - y).norm();
    if (dist <= epsilon) return s;
    return y + (epsilon / dist) * (s - y);
}

namespace {

// Forward differences with Neumann boundary; div is the negative adjoint.
void gradient(const Image& u, Image& gx, Image& gy) {
    for (int i = 0; i < u.rows; ++i)
        for (int j = 0; j < u.cols; ++j) {
            gx(i, j) = (j + 1 < u.cols) ? u(i, j + 1) - u(i, j) : 0.0;
            gy(i, j) = (i + 1 < u.rows) ? u(i + 1, j) - u(i, j) : 0.0;
        }
}

void divergence(const Image& px, const Image& py, Image& out) {
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) {
            double v = 0.0;
            if (j + 1 < out.cols) v += px(i, j);
            if (j > 0) v -= px(i, j - 1);
            if (i + 1 < out.rows) v += py(i, j);
            if (i > 0) v -= py(i - 1, j);
            out(i, j) = v;
        }
}

}  // namespace

Image tv_denoise(const Image& v, double mu, int inner_iters) {
    if (mu < 0.0) throw std::invalid_argument("tv_denoise: mu must be >= 0");
    if (mu == 0.0) return v;
    const double tau = 0.249;  // dual step, stable below 1/8 of ||div grad||

    Image px(v.rows, v.cols), py(v.rows, v.cols);
    Image div_p(v.rows, v.cols), work(v.rows, v.cols);
    Image gx(v.rows, v.cols), gy(v.rows, v.cols);
    for (int it = 0; it < inner_iters; ++it) {
        divergence(px, py, div_p);
        for (size_t i = 0; i < work.data.size(); ++i)
            work.data[i] = div_p.data[i] - v.data[i] / mu;
        gradient(work, gx, gy);
        for (size_t i = 0; i < px.data.size(); ++i) {
            const double nx = px.data[i] + tau * gx.data[i];
            const double ny = py.data[i] + tau * gy.data[i];
            const double denom = 1.0 + tau * std::hypot(gx.data[i], gy.data[i]);
            px.data[i] = nx / denom;
            py.data[i] = ny / denom;
        }
    }
    divergence(px, py, div_p);
    Image out = v;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= mu * div_p.data[i];
    return out;
}

DenoiserHandle identity_denoiser() {
    return {"identity", [](const Image& v, double) { return v; }};
}

DenoiserHandle tv_denoiser() {
    return {"tv", [](const Image& v, double mu) { return tv_denoise(v, mu); }};
}

DenoiserHandle denoiser_from_string(const std::string& name) {
    if (name == "identity") return identity_denoiser();
    if (name == "tv") return tv_denoiser();
    throw std::invalid_argument("unknown denoiser: " + name);
}

ForwardOperator make_operator(const DenseSystemMatrix& c) {
    ForwardOperator op;
    op.geom = c.geom;
    op.apply = [&c](const Eigen::VectorXd& x) { return c.apply(x); };
    op.apply_transpose = [&c](const Eigen::VectorXd& y) { return c.apply_transpose(y); };
    return op;
}

ForwardOperator make_operator(const BlockDiagSystemMatrix& c) {
    ForwardOperator op;
    op.geom = c.geom;
    op.apply = [&c](const Eigen::VectorXd& x) { return c.apply(x); };
    op.apply_transpose = [&c](const Eigen::VectorXd& y) { return c.apply_transpose(y); };
    return op;
}

Image ppfpa(const ForwardOperator& c, const NormalInverse& normal_inv, const Eigen::VectorXd& y,
            const DenoiserHandle& denoiser, const PpfpaOptions& opt, PpfpaTrace* trace,
            const IterObserver& observer) {
    const auto& g = c.geom;
    if (y.size() != g.rows()) throw std::invalid_argument("ppfpa: measurement length mismatch");
    if (opt.stop.max_iter < 1 || opt.stop.tol <= 0.0)
        throw std::invalid_argument("ppfpa: bad stopping rule");

    AdmmState st;
    st.epsilon = opt.epsilon;
    st.mu = opt.mu;
    st.z0 = y;
    st.d0 = Eigen::VectorXd::Zero(g.rows());
    st.z1 = opt.init_z1 ? *opt.init_z1 : c.apply_transpose(y);
    if (st.z1.size() != g.n()) throw std::invalid_argument("ppfpa: init_z1 length mismatch");
    st.d1 = Eigen::VectorXd::Zero(g.n());
    st.x = Eigen::VectorXd::Zero(g.n());

    bool converged = false;
    Image v(g.n1, g.n2);
    for (int n = 1; n <= opt.stop.max_iter; ++n) {
        st.x = normal_inv.apply(c.apply_transpose(st.z0 + st.d0) + st.z1 + st.d1);
        const Eigen::VectorXd cx = c.apply(st.x);

        st.z0 = prox_l2_ball(cx - st.d0, y, opt.epsilon);

        for (int i = 0; i < g.n(); ++i) v.data[i] = st.x[i] - st.d1[i];
        Image denoised = denoiser.fn(v, opt.mu);
        if (!denoised.same_shape(v)) throw std::runtime_error("ppfpa: denoiser changed shape");
        for (int i = 0; i < g.n(); ++i) st.z1[i] = denoised.data[i];

        st.d0 += st.z0 - cx;
        st.d1 += st.z1 - st.x;

        st.iteration = n;
        st.r0 = (st.z0 - cx).norm();
        st.r1 = (st.z1 - st.x).norm();
        if (!std::isfinite(st.r0) || !std::isfinite(st.r1) || !st.x.allFinite())
            throw std::runtime_error("ppfpa: non-finite iterate at iteration " +
                                     std::to_string(n));
        if (observer) observer(st);

        const double scale = opt.stop.tol * (1.0 + st.x.norm());
        if (st.r0 <= scale && st.r1 <= scale) {
            converged = true;
            break;
        }
    }

    if (trace) {
        trace->iterations = st.iteration;
        trace->r0 = st.r0;
        trace->r1 = st.r1;
        trace->converged = converged;
    }

    Image out(g.n1, g.n2);
    for (int i = 0; i < g.n(); ++i) out.data[i] = std::min(1.0, std::max(0.0, st.x[i]));
    return out;
}

double set_epsilon_from_noise(double sigma, int measurement_count, double multiplier) {
    if (sigma < 0.0) throw std::invalid_argument("set_epsilon_from_noise: sigma must be >= 0");
    return multiplier * sigma * std::sqrt(static_cast<double>(measurement_count));
}

}  // namespace cfpa
