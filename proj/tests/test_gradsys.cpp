#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "greybox/blackbox.hpp"
#include "greybox/cost.hpp"
#include "greybox/dynamics.hpp"
#include "greybox/gradsys.hpp"
#include "test_util.hpp"

#include <cmath>
#include <sstream>

using namespace greybox;
using greybox::testing::fd_gradient;
using greybox::testing::max_rel_error;
using greybox::testing::random_mat;
using greybox::testing::random_vec;

namespace {

Dataset logistic_data(double theta, double x0, Index T) {
    Dataset d;
    d.u = Mat(0, T);
    d.z = simulate(logistic_map(), Vec::Constant(1, x0), Vec::Constant(1, theta), d.u).z;
    return d;
}

Dataset tanks_data(Index T, std::mt19937_64& rng) {
    Dataset d;
    d.u = random_mat(1, T, rng, 2.0, 7.0);
    Vec k(4);
    k << 0.0764, 0.0268, 0.0415, 0.0386;
    Vec x0(2);
    x0 << 5.0, 3.0;
    d.z = simulate(cascaded_tanks(4.0), x0, k, d.u).z;
    for (Index i = 0; i < d.z.size(); ++i) d.z(i) += 0.05 * random_vec(1, rng)(0);
    d.Ts = 4.0;
    return d;
}

StepSensitivities scalar_sens(double a, double c, double rho, double varrho) {
    StepSensitivities s;
    s.rho = Vec::Constant(1, rho);
    s.varrho = Vec::Constant(1, varrho);
    s.jxx = Mat::Constant(1, 1, a);
    s.jxv = Mat::Constant(1, 1, c);
    s.jzx = Mat::Ones(1, 1);
    return s;
}

}  // namespace

TEST_CASE("parameter packing") {
    std::mt19937_64 rng(1);
    BlackBox bb = greybox::testing::random_blackbox(2, 1, rng);
    const ParametricModel m = cascaded_tanks(4.0);
    const Vec th = random_vec(4, rng);
    const Vec v = pack_vartheta(th, &bb);
    CHECK(v.size() == n_vartheta(m, &bb));
    CHECK(v.size() == 4 + bb.n_weights());
    CHECK(v(4) == bb.omega(0, 0));
    CHECK(v(5) == bb.omega(1, 0));
    BlackBox other = bb;
    other.omega.setZero();
    const Vec th2 = unpack_vartheta(v, 4, &other);
    CHECK((th2 - th).norm() == 0.0);
    CHECK((other.omega - bb.omega).norm() == 0.0);
    CHECK(n_vartheta(m, nullptr) == 4);
}

TEST_CASE("sensitivities of a pure quadratic loss") {
    const ParametricModel m = cascaded_tanks(4.0);
    CostSpec s;
    Vec x(2);
    x << 2.0, 3.0;
    const Vec e = Vec::Constant(1, 0.7);
    const StepSensitivities sens = step_sensitivities(m, nullptr, s, x, Vec::Ones(1), e, Vec::Constant(4, 0.05), 10, true);
    const Mat hx = m.jacobians(x, Vec::Ones(1), Vec::Constant(4, 0.05)).hx;
    CHECK((sens.rho - (2.0 / 10.0) * hx.transpose() * e).norm() < 1e-15);
    CHECK(sens.varrho.norm() == 0.0);
    const StepSensitivities zero = step_sensitivities(m, nullptr, s, x, Vec::Ones(1), Vec::Zero(1), Vec::Constant(4, 0.05), 10, true);
    CHECK(zero.rho.norm() < 1e-15);
    const StepSensitivities masked = step_sensitivities(m, nullptr, s, x, Vec::Ones(1), e, Vec::Constant(4, 0.05), 10, false);
    CHECK(masked.rho.norm() == 0.0);
}

TEST_CASE("sensitivity components against differences of their penalties") {
    std::mt19937_64 rng(2);
    const ParametricModel m = cascaded_tanks(4.0);
    BlackBox bb = greybox::testing::random_blackbox(2, 1, rng, 0.5);
    CostSpec s;
    s.lambda = 0.3;
    s.gamma = 0.02;
    s.alpha = 2.0;
    s.state_bounds.lower = Vec::Constant(2, 1.0);
    s.state_bounds.upper = Vec::Constant(2, 3.0);
    s.theta_bounds.lower = Vec::Constant(4, 0.0);
    s.theta_bounds.upper = Vec::Constant(4, 0.1);
    const Index T = 7;
    for (int rep = 0; rep < 10; ++rep) {
        const Vec x = random_vec(2, rng, 0.5, 3.5), th = random_vec(4, rng, -0.05, 0.15);
        const Vec zk = random_vec(1, rng, 0, 4);
        const Vec u = random_vec(1, rng, 0, 5);
        const Vec e = m.observe(x) - zk;
        const StepSensitivities sens = step_sensitivities(m, &bb, s, x, u, e, th, T, true);
        const auto stage = [&](const Vec& xx, const Vec& tt, const BlackBox& b) {
            return local_loss(s, m.observe(xx) - zk, T) + s.lambda * step_penalty(s, xx, tt).inequality +
                   s.gamma * softplus_l1(Eigen::Map<const Vec>(b.omega.data(), b.omega.size()), s.beta);
        };
        const Vec frho = fd_gradient([&](const Vec& xx) { return stage(xx, th, bb); }, x);
        const Vec v = pack_vartheta(th, &bb);
        BlackBox tmp = bb;
        const Vec fvar = fd_gradient(
            [&](const Vec& vv) {
                const Vec tt = unpack_vartheta(vv, 4, &tmp);
                return stage(x, tt, tmp);
            },
            v);
        CHECK(max_rel_error(sens.rho, frho) <= 1e-6);
        CHECK(max_rel_error(sens.varrho, fvar) <= 1e-6);
    }
}

TEST_CASE("memory matrix follows the geometric series") {
    const double a = 0.7, c = 1.3;
    GradientState st = GradientState::initial(1, 1);
    for (int k = 0; k <= 12; ++k) {
        propagate(st, scalar_sens(a, c, 0.0, 0.0));
        double series = 0.0;
        for (int i = 0; i < k; ++i) series += std::pow(a, i);
        CHECK(st.lambda(0, 0) == doctest::Approx(c * series).epsilon(1e-13));
        CHECK(st.lambda0(0, 0) == doctest::Approx(std::pow(a, k)).epsilon(1e-13));
    }
    CHECK(st.grad.norm() == 0.0);
    CHECK(st.grad_x0.norm() == 0.0);
    CHECK(st.k == 12);
}

TEST_CASE("initial-state memory of a linear system is A to the k") {
    std::mt19937_64 rng(3);
    const Mat A = random_mat(3, 3, rng, -0.6, 0.6);
    GradientState st = GradientState::initial(3, 2);
    Mat Ak = Mat::Identity(3, 3);
    for (int k = 0; k < 8; ++k) {
        StepSensitivities s;
        s.rho = Vec::Zero(3);
        s.varrho = Vec::Zero(2);
        s.jxx = A;
        s.jxv = Mat::Zero(3, 2);
        propagate(st, s);
        CHECK((st.lambda0 - Ak).norm() < 1e-13);
        Ak = A * Ak;
    }
}

TEST_CASE("innovation folds rho through the memory matrix") {
    GradientState st = GradientState::initial(1, 1);
    propagate(st, scalar_sens(0.5, 2.0, 1.0, 0.25));
    CHECK(st.grad(0) == doctest::Approx(0.25));
    const Vec inn = propagate(st, scalar_sens(0.5, 2.0, 1.0, 0.25));
    CHECK(inn(0) == doctest::Approx(2.0 + 0.25));
    CHECK(st.grad_x0(0) == doctest::Approx(1.0 + 0.5));
}

TEST_CASE("gradient vanishes at the truth on noiseless data") {
    const Dataset d = logistic_data(3.5, 0.4, 200);
    const FullGradient g = full_gradient(logistic_map(), nullptr, CostSpec{}, d, Vec::Constant(1, 3.5), Vec::Constant(1, 0.4));
    CHECK(g.grad.norm() < 1e-8);
    CHECK(g.grad_x0.norm() < 1e-8);
    CHECK(g.cost < 1e-20);
}

TEST_CASE("logistic gradient against central differences") {
    std::mt19937_64 rng(4);
    const Dataset d = logistic_data(3.5, 0.4, 50);
    for (int rep = 0; rep < 5; ++rep) {
        const double th = 2.8 + 0.75 * random_vec(1, rng, 0, 1)(0);
        const double x0 = 0.3 + 0.2 * random_vec(1, rng, 0, 1)(0);
        const GradientCheck chk = check_gradient(logistic_map(), nullptr, CostSpec{}, d, Vec::Constant(1, th), Vec::Constant(1, x0));
        INFO("theta=", th, " x0=", x0, " exact=", chk.exact.transpose(), " fd=", chk.fd.transpose());
        CHECK(chk.max_rel_error <= 1e-5);
    }
}

TEST_CASE("scalar linear model against the closed-form least-squares gradient") {
    std::mt19937_64 rng(5);
    const Index T = 30;
    const ParametricModel m = linear_state_space(1, 1, Mat());
    Dataset d;
    d.u = random_mat(1, T, rng);
    d.z = random_mat(1, T, rng);
    const double a = 0.8, b = 0.6, x0 = 0.3;
    Vec theta(2);
    theta << a, b;
    // x_k = a^k x0 + sum_{j<k} a^(k-1-j) b u_j
    Vec x(T), dxa(T), dxb(T), dx0(T);
    for (Index k = 0; k < T; ++k) {
        x(k) = std::pow(a, k) * x0;
        dxa(k) = k > 0 ? k * std::pow(a, k - 1) * x0 : 0.0;
        dxb(k) = 0.0;
        dx0(k) = std::pow(a, k);
        for (Index j = 0; j < k; ++j) {
            const Index p = k - 1 - j;
            x(k) += std::pow(a, p) * b * d.u(0, j);
            dxb(k) += std::pow(a, p) * d.u(0, j);
            if (p > 0) dxa(k) += p * std::pow(a, p - 1) * b * d.u(0, j);
        }
    }
    const Vec e = x - d.z.row(0).transpose();
    const double ga = 2.0 / T * e.dot(dxa), gb = 2.0 / T * e.dot(dxb), g0 = 2.0 / T * e.dot(dx0);
    const FullGradient g = full_gradient(m, nullptr, CostSpec{}, d, theta, Vec::Constant(1, x0));
    CHECK(g.grad(0) == doctest::Approx(ga).epsilon(1e-8));
    CHECK(g.grad(1) == doctest::Approx(gb).epsilon(1e-8));
    CHECK(g.grad_x0(0) == doctest::Approx(g0).epsilon(1e-8));
    CHECK(g.cost == doctest::Approx(e.squaredNorm() / T).epsilon(1e-12));
}

TEST_CASE("input matrix gradient of a vector linear model is linear least squares") {
    std::mt19937_64 rng(6);
    const Index T = 20, nx = 2, nu = 2;
    const ParametricModel m = linear_state_space(nx, nu, Mat());
    Dataset d;
    d.u = random_mat(nu, T, rng);
    d.z = random_mat(nx, T, rng);
    const Mat A = random_mat(nx, nx, rng, -0.5, 0.5);
    const Mat B = random_mat(nx, nu, rng);
    Vec theta(nx * nx + nx * nu);
    theta << Eigen::Map<const Vec>(A.data(), nx * nx), Eigen::Map<const Vec>(B.data(), nx * nu);
    // x_k = M_k vec(B) with M_k = sum_j u_j^T kron A^(k-1-j), x0 = 0
    Vec gB = Vec::Zero(nx * nu);
    for (Index k = 0; k < T; ++k) {
        Mat Mk = Mat::Zero(nx, nx * nu);
        for (Index j = 0; j < k; ++j) {
            Mat Ap = Mat::Identity(nx, nx);
            for (Index p = 0; p < k - 1 - j; ++p) Ap = A * Ap;
            for (Index c = 0; c < nu; ++c) Mk.middleCols(c * nx, nx) += d.u(c, j) * Ap;
        }
        const Vec xk = Mk * Eigen::Map<const Vec>(B.data(), nx * nu);
        gB += 2.0 / T * Mk.transpose() * (xk - d.z.col(k));
    }
    const FullGradient g = full_gradient(m, nullptr, CostSpec{}, d, theta, Vec::Zero(nx));
    CHECK(max_rel_error(g.grad.tail(nx * nu), gB, 1e-9) <= 1e-8);
}

TEST_CASE("augmented tanks gradient matches differences at T 64") {
    std::mt19937_64 rng(7);
    const Dataset d = tanks_data(64, rng);
    BlackBox bb = greybox::testing::random_blackbox(2, 1, rng);
    CostSpec s;
    s.gamma = 1e-3;
    s.lambda = 1e-3;
    s.alpha = 50.0;
    s.theta_bounds.lower = Vec::Zero(4);
    s.theta_bounds.upper = Vec::Constant(4, 0.1);
    const Vec th = Vec::Constant(4, 0.05);
    Vec x0(2);
    x0 << 4.8, 3.1;
    const GradientCheck chk = check_gradient(cascaded_tanks(4.0), &bb, s, d, th, x0);
    CHECK(chk.exact.size() == 4 + bb.n_weights() + 2);
    CHECK(chk.max_rel_error <= 1e-5);
    CHECK(chk.escaped.empty());
}

TEST_CASE("a large difference step degrades agreement") {
    std::mt19937_64 rng(8);
    const Dataset d = logistic_data(3.5, 0.4, 50);
    const Vec th = Vec::Constant(1, 3.45), x0 = Vec::Constant(1, 0.41);
    const GradientCheck fine = check_gradient(logistic_map(), nullptr, CostSpec{}, d, th, x0, 1e-6);
    const GradientCheck coarse = check_gradient(logistic_map(), nullptr, CostSpec{}, d, th, x0, 0.1);
    CHECK(coarse.max_rel_error > 100.0 * fine.max_rel_error);
    CHECK(coarse.max_rel_error > 1e-3);
}

TEST_CASE("the cost is reported alongside the gradient") {
    std::mt19937_64 rng(9);
    const Dataset d = tanks_data(40, rng);
    BlackBox bb = greybox::testing::random_blackbox(2, 1, rng);
    CostSpec s;
    s.gamma = 0.01;
    const Vec th = Vec::Constant(4, 0.05), x0 = Vec::Constant(2, 4.0);
    const FullGradient g = full_gradient(cascaded_tanks(4.0), &bb, s, d, th, x0);
    const CostBreakdown c = total_cost(cascaded_tanks(4.0), &bb, s, d, th, x0);
    CHECK(g.cost == doctest::Approx(c.total).epsilon(1e-12));
    CHECK(g.trace.innovation_norm.size() == 40);
}

TEST_CASE("stability monitor verdicts") {
    const Dataset d = logistic_data(3.5, 0.4, 100);
    const FullGradient ok = full_gradient(logistic_map(), nullptr, CostSpec{}, d, Vec::Constant(1, 3.45), Vec::Constant(1, 0.4));
    CHECK(stability_monitor(ok.trace, 1e12).kind == MonitorKind::Stable);
    const MonitorVerdict tight = stability_monitor(ok.trace, 1e-9);
    CHECK(tight.kind == MonitorKind::InnovationBudgetExceeded);
    CHECK(tight.step >= 0);

    GradientOptions opts;
    opts.sim.throw_on_escape = false;
    const FullGradient bad = full_gradient(logistic_map(), nullptr, CostSpec{}, d, Vec::Constant(1, 4.5), Vec::Constant(1, 0.5), opts);
    REQUIRE(bad.escape_step.has_value());
    const MonitorVerdict v = stability_monitor(bad.trace, 1e12, 1e6, bad.escape_step);
    CHECK(v.kind == MonitorKind::FiniteEscape);
    CHECK(v.step < 100);
    CHECK(to_string(MonitorKind::FiniteEscape) == "FiniteEscape");
}

TEST_CASE("escaping trajectories keep the partial trace") {
    const Dataset d = logistic_data(3.5, 0.4, 100);
    const FullGradient g = full_gradient(logistic_map(), nullptr, CostSpec{}, d, Vec::Constant(1, 4.5), Vec::Constant(1, 0.5));
    REQUIRE(g.escape_step.has_value());
    CHECK(g.trace.innovation_norm.size() == static_cast<std::size_t>(*g.escape_step));
    CHECK(std::isinf(g.cost));
    CHECK_THROWS_AS(check_gradient(logistic_map(), nullptr, CostSpec{}, d, Vec::Constant(1, 4.5), Vec::Constant(1, 0.5)),
                    EscapeError);
}

TEST_CASE("trace CSV has one row per step") {
    const Dataset d = logistic_data(3.5, 0.4, 10);
    const FullGradient g = full_gradient(logistic_map(), nullptr, CostSpec{}, d, Vec::Constant(1, 3.4), Vec::Constant(1, 0.4));
    std::stringstream ss;
    write_trace_csv(ss, g.trace);
    std::string line;
    int rows = 0;
    while (std::getline(ss, line)) ++rows;
    CHECK(rows == 11);
}
