#include "greybox/diagnostics.hpp"

#include "greybox/gradsys.hpp"

#include <cmath>
#include <limits>

namespace greybox {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void analyse(IdentifiabilityReport& r) {
    if (!r.hessian.allFinite()) {
        r.eigenvalues = Vec::Constant(r.hessian.rows(), kNaN);
        r.lambda_min = r.lambda_max = kNaN;
        r.condition = std::numeric_limits<double>::infinity();
        r.positive_definite = false;
        return;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(r.hessian, Eigen::EigenvaluesOnly);
    r.eigenvalues = es.eigenvalues();
    r.lambda_min = r.eigenvalues(0);
    r.lambda_max = r.eigenvalues(r.eigenvalues.size() - 1);
    r.positive_definite = r.lambda_max > 0 && r.lambda_min > 1e-10 * r.lambda_max;
    r.condition = r.positive_definite ? r.lambda_max / r.lambda_min : std::numeric_limits<double>::infinity();
}

double spectral_norm(const Mat& A) {
    if (A.size() == 0) return 0.0;
    Eigen::JacobiSVD<Mat> svd(A);
    return svd.singularValues()(0);
}

}  // namespace

IdentifiabilityReport hessian_from_gradient(const GradientFn& grad, const Vec& point, double rel_step) {
    if (!(rel_step > 0)) throw ConfigError("hessian: step must be positive");
    const Index n = point.size();
    IdentifiabilityReport r;
    r.hessian = Mat::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        Vec pp = point, pm = point;
        const double h = rel_step * std::max(1.0, std::abs(point(i)));
        pp(i) += h;
        pm(i) -= h;
        try {
            const Vec gp = grad(pp), gm = grad(pm);
            if (gp.size() != n || gm.size() != n) throw ConfigError("hessian: gradient has wrong length");
            r.hessian.col(i) = (gp - gm) / (pp(i) - pm(i));
        } catch (const EscapeError&) {
            r.escaped.push_back(i);
            r.hessian.col(i).setConstant(kNaN);
        }
    }
    r.hessian = 0.5 * (r.hessian + r.hessian.transpose()).eval();
    analyse(r);
    return r;
}

IdentifiabilityReport hessian_estimate(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                                       const Dataset& data, const Vec& theta, const Vec& x0, bool include_x0,
                                       double rel_step) {
    const Index ntheta = model.dims().ntheta;
    const Index nv = n_vartheta(model, bb);
    BlackBox work = bb ? *bb : BlackBox();
    BlackBox* wp = bb ? &work : nullptr;
    Vec point(nv + (include_x0 ? x0.size() : 0));
    if (include_x0)
        point << pack_vartheta(theta, bb), x0;
    else
        point = pack_vartheta(theta, bb);
    GradientFn g = [&](const Vec& p) {
        const Vec th = unpack_vartheta(p.head(nv), ntheta, wp);
        const Vec xx = include_x0 ? Vec(p.tail(x0.size())) : x0;
        const FullGradient fg = full_gradient(model, wp, spec, data, th, xx);
        if (fg.escape_step) throw EscapeError(*fg.escape_step, "hessian: perturbed point escaped");
        if (!include_x0) return fg.grad;
        Vec out(p.size());
        out << fg.grad, fg.grad_x0;
        return out;
    };
    return hessian_from_gradient(g, point, rel_step);
}

double NoiseModel::input_bound() const {
    return distribution == NoiseDistribution::uniform ? input_scale : 3.0 * input_scale;
}

double NoiseModel::output_bound() const {
    return distribution == NoiseDistribution::uniform ? output_scale : 3.0 * output_scale;
}

double NoiseModel::draw(double scale, std::mt19937_64& rng) const {
    if (scale <= 0) return 0.0;
    if (distribution == NoiseDistribution::uniform) {
        std::uniform_real_distribution<double> u(-scale, scale);
        return u(rng);
    }
    std::normal_distribution<double> n(0.0, scale);
    for (;;) {
        const double v = n(rng);
        if (std::abs(v) <= 3.0 * scale) return v;
    }
}

Vec newton_identify(const ParametricModel& model, const CostSpec& spec, const Dataset& data, const Vec& theta0,
                    const Vec& x0, int iterations) {
    Vec theta = theta0;
    GradientFn g = [&](const Vec& th) {
        const FullGradient fg = full_gradient(model, nullptr, spec, data, th, x0);
        if (fg.escape_step) throw EscapeError(*fg.escape_step, "newton: escaped");
        return fg.grad;
    };
    for (int it = 0; it < iterations; ++it) {
        const Vec gr = g(theta);
        const IdentifiabilityReport h = hessian_from_gradient(g, theta);
        if (!h.positive_definite) throw NotIdentifiableError("newton: Hessian not positive definite");
        const Vec step = h.hessian.ldlt().solve(gr);
        theta -= step;
        if (step.norm() <= 1e-14 * std::max(1.0, theta.norm())) break;
    }
    return theta;
}

ErrorBoundEstimate error_bound_mc(const ParametricModel& model, const CostSpec& spec, const DatasetGenerator& generate,
                                  const ThetaSolver& solve, const Vec& x0, const NoiseModel& noise,
                                  std::size_t samples, double delta_bar) {
    if (samples < 1) throw ConfigError("error_bound_mc: need at least one sample");
    ErrorBoundEstimate est;
    est.samples = samples;
    est.delta_bar = delta_bar;
    std::mt19937_64 rng(noise.seed);
    Index T = 0, nu = model.dims().nu, nz = model.dims().nz;
    for (std::size_t s = 0; s < samples; ++s) {
        const Dataset data = generate(rng);
        data.validate(model.dims());
        T = data.horizon();
        const Vec th = solve(data);
        auto grad_for = [&](const Dataset& d) {
            const FullGradient fg = full_gradient(model, nullptr, spec, d, th, x0);
            if (fg.escape_step) throw EscapeError(*fg.escape_step, "error_bound_mc: escaped");
            return fg.grad;
        };
        GradientFn g = [&](const Vec& t) {
            const FullGradient fg = full_gradient(model, nullptr, spec, data, t, x0);
            if (fg.escape_step) throw EscapeError(*fg.escape_step, "error_bound_mc: escaped");
            return fg.grad;
        };
        const IdentifiabilityReport H = hessian_from_gradient(g, th);
        if (!H.positive_definite)
            throw NotIdentifiableError("error_bound_mc: Hessian not positive definite at theta*; see hessian_estimate");
        const Eigen::LDLT<Mat> Hf(H.hessian);
        auto sensitivity = [&](bool inputs) {
            const Mat& src = inputs ? data.u : data.z;
            Mat G(th.size(), src.size());
            for (Index c = 0; c < src.cols(); ++c)
                for (Index r = 0; r < src.rows(); ++r) {
                    Dataset dp = data, dm = data;
                    Mat& tp = inputs ? dp.u : dp.z;
                    Mat& tm = inputs ? dm.u : dm.z;
                    const double h = 1e-5 * std::max(1.0, std::abs(src(r, c)));
                    tp(r, c) += h;
                    tm(r, c) -= h;
                    G.col(c * src.rows() + r) = (grad_for(dp) - grad_for(dm)) / (tp(r, c) - tm(r, c));
                }
            return Mat(Hf.solve(G));
        };
        const double mu = nu > 0 ? spectral_norm(sensitivity(true)) : 0.0;
        const double mz = spectral_norm(sensitivity(false));
        est.sample_M_u.push_back(mu);
        est.sample_M_z.push_back(mz);
        est.M_u = std::max(est.M_u, mu);
        est.M_z = std::max(est.M_z, mz);
    }
    est.eta_u = noise.input_bound() * std::sqrt(static_cast<double>(nu * T));
    est.eta_z = noise.output_bound() * std::sqrt(static_cast<double>(nz * T));
    est.bound = est.M_u * est.eta_u + est.M_z * est.eta_z;
    return est;
}

}  // namespace greybox
