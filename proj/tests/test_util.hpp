#pragma once

#include "greybox/blackbox.hpp"
#include "greybox/common.hpp"
#include "greybox/dynamics.hpp"
#include "greybox/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace greybox::testing {

inline Vec random_vec(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = d(rng);
    return v;
}

inline Mat random_mat(Index r, Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Mat m(r, c);
    for (Index i = 0; i < m.size(); ++i) m(i) = d(rng);
    return m;
}

inline Mat gaussian_mat(Index r, Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Mat m(r, c);
    for (Index i = 0; i < m.size(); ++i) m(i) = d(rng);
    return m;
}

/// max_i |a_i - b_i| / max(|b_i|, floor * ||b||_inf, 1e-300)
inline double max_rel_error(const Mat& a, const Mat& b, double floor = 1e-3) {
    const double scale = b.size() ? b.cwiseAbs().maxCoeff() : 0.0;
    double worst = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        const double den = std::max({std::abs(b(i)), floor * scale, 1e-300});
        worst = std::max(worst, std::abs(a(i) - b(i)) / den);
    }
    return worst;
}

/// Central-difference Jacobian of f at x, step h * max(1, |x_i|).
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-6) {
    const Vec f0 = f(x);
    Mat J(f0.size(), x.size());
    for (Index i = 0; i < x.size(); ++i) {
        const double s = h * std::max(1.0, std::abs(x(i)));
        Vec xp = x, xm = x;
        xp(i) += s;
        xm(i) -= s;
        J.col(i) = (f(xp) - f(xm)) / (2.0 * s);
    }
    return J;
}

inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6) {
    Vec g(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        const double s = h * std::max(1.0, std::abs(x(i)));
        Vec xp = x, xm = x;
        xp(i) += s;
        xm(i) -= s;
        g(i) = (f(xp) - f(xm)) / (2.0 * s);
    }
    return g;
}

/// Black box with small random weights so trajectories stay bounded.
inline BlackBox random_blackbox(Index nx, Index nu, std::mt19937_64& rng, double omega_scale = 0.05,
                                double w_scale = 0.1, double b_scale = 0.5) {
    BlackBox bb(nx, nu, default_dictionary());
    bb.omega = random_mat(bb.omega.rows(), bb.omega.cols(), rng, -omega_scale, omega_scale);
    bb.w = random_mat(bb.w.rows(), bb.w.cols(), rng, -w_scale, w_scale);
    bb.b = random_mat(bb.b.rows(), bb.b.cols(), rng, -b_scale, b_scale);
    return bb;
}

/// Scalar x' = a x + theta u, z = x.
inline ParametricModel input_gain_model(double a) {
    return ParametricModel(
        "input-gain", Dimensions{1, 1, 1, 1},
        [a](const Vec& x, const Vec& u, const Vec& th) { return Vec::Constant(1, a * x(0) + th(0) * u(0)).eval(); },
        [](const Vec& x) { return x; },
        ParametricModel::Analytic{[a](const Vec&, const Vec&, const Vec&) { return Mat::Constant(1, 1, a).eval(); },
                                  [](const Vec&, const Vec& u, const Vec&) { return Mat::Constant(1, 1, u(0)).eval(); },
                                  [](const Vec&) { return Mat::Identity(1, 1).eval(); }});
}

/// d xhat_k / d theta for input_gain_model with x0 fixed.
inline Vec input_gain_sensitivity(double a, const Mat& u) {
    Vec s = Vec::Zero(u.cols());
    for (Index k = 1; k < u.cols(); ++k) s(k) = a * s(k - 1) + u(0, k - 1);
    return s;
}

/// x' = diag(theta) u + delta(u): the physical part and the black box (input rows of W only)
/// depend on u alone, so the multi-step predictor is the single-step regression.
struct InputDrivenInstance {
    ParametricModel model;
    BlackBox bb;
    Dataset data;
    Vec theta;
    RegressionSplit single;  ///< hand-built single-step split, mu 2% above the residual at the truth
};

inline InputDrivenInstance input_driven_instance(Index T, std::mt19937_64& rng) {
    const Index nx = 2, nu = 1;
    ParametricModel m(
        "input-driven", Dimensions{nx, nu, nx, nx * nu},
        [](const Vec&, const Vec& u, const Vec& th) { return Vec(th * u(0)); }, [](const Vec& x) { return x; },
        ParametricModel::Analytic{[](const Vec&, const Vec&, const Vec&) { return Mat(Mat::Zero(2, 2)); },
                                  [](const Vec&, const Vec& u, const Vec&) { return Mat(Mat::Identity(2, 2) * u(0)); },
                                  [](const Vec&) { return Mat(Mat::Identity(2, 2)); }});
    BlackBox bb(nx, nu, BasisDictionary::from_names({"sin", "cos", "tanh"}));
    bb.w = random_mat(nx + nu, nx * 3, rng);
    bb.w.topRows(nx).setZero();
    bb.b = random_mat(nx, 3, rng);
    bb.omega.setZero();
    bb.omega(0, 1) = 0.8;
    bb.omega(1, 2) = -0.6;
    Dataset d;
    d.u = random_mat(1, T, rng, -2, 2);
    Vec th(2);
    th << 0.5, -0.3;
    d.z = simulate(m, Vec::Zero(2), th, d.u, &bb).z;
    for (Index i = 0; i < d.z.size(); ++i) d.z(i) += 0.01 * random_vec(1, rng)(0);

    RegressionSplit single;
    single.xi = Mat::Zero((T - 1) * nx, 2);
    single.phi = Mat::Zero((T - 1) * nx, bb.n_omega());
    single.z.resize((T - 1) * nx);
    for (Index k = 0; k + 1 < T; ++k) {
        const double u = d.u(0, k);
        for (Index i = 0; i < nx; ++i) {
            const Index r = k * nx + i;
            single.xi(r, i) = u;
            for (Index j = 0; j < 3; ++j) {
                const double arg = bb.w(nx, i * 3 + j) * u + bb.b(i, j);
                single.phi(r, i + j * nx) = bb.dictionary()[j].value(arg);
            }
            single.z(r) = d.z(i, k + 1);
        }
    }
    const Vec om = Eigen::Map<const Vec>(bb.omega.data(), bb.n_omega());
    single.mu = 1.02 * optimal_compensation_error(single, om).norm();
    return InputDrivenInstance{std::move(m), std::move(bb), std::move(d), th, std::move(single)};
}

struct PlantedInstance {
    RegressionSplit split;
    Vec theta;
    Vec omega;
    std::vector<Index> support;
    Vec noise;
};

/// z = Xi theta + Phi omega + noise with Gaussian Xi, Phi and a random s-sparse omega with
/// magnitudes in [1, 2]. Noise entries are uniform in [-eps, eps], where eps sqrt(T) = ||Phi omega|| / snr,
/// and mu = eps sqrt(T) bounds the noise norm.
inline PlantedInstance planted_instance(Index T, Index ntheta, Index m, Index s, double snr, std::mt19937_64& rng) {
    PlantedInstance p;
    p.split.xi = gaussian_mat(T, ntheta, rng);
    p.split.phi = gaussian_mat(T, m, rng);
    p.theta = random_vec(ntheta, rng, -1.0, 1.0);
    p.omega = Vec::Zero(m);
    std::vector<Index> idx(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_real_distribution<double> mag(1.0, 2.0);
    std::bernoulli_distribution sign(0.5);
    for (Index k = 0; k < s; ++k) {
        const Index i = idx[static_cast<std::size_t>(k)];
        p.omega(i) = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    }
    p.support = support_of(p.omega);
    const Vec signal = p.split.phi * p.omega;
    const double eps = std::isinf(snr) ? 0.0 : signal.norm() / (snr * std::sqrt(static_cast<double>(T)));
    p.noise = random_vec(T, rng, -eps, eps);
    p.split.z = p.split.xi * p.theta + signal + p.noise;
    p.split.mu = eps * std::sqrt(static_cast<double>(T));
    return p;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const char* env = std::getenv("GREYBOX_TEST_TMP");
    std::filesystem::path base = env ? std::filesystem::path(env) : std::filesystem::temp_directory_path() / "greybox_test";
    std::filesystem::path p = base / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace greybox::testing
