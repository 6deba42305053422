#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "greybox/blackbox.hpp"
#include "greybox/dynamics.hpp"
#include "greybox/sparsity.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>

using namespace greybox;
using greybox::testing::fd_jacobian;
using greybox::testing::gaussian_mat;
using greybox::testing::max_rel_error;
using greybox::testing::planted_instance;
using greybox::testing::random_mat;
using greybox::testing::random_vec;

namespace {

double relaxed_ls_residual(const RegressionSplit& s, const Vec& omega) {
    const Vec r = s.z - s.phi * omega;
    if (s.xi.cols() == 0) return r.norm();
    const Vec th = s.xi.colPivHouseholderQr().solve(r);
    return (r - s.xi * th).norm();
}

/// Soft-threshold oracle for orthonormal Phi and empty Xi.
Vec soft_threshold_oracle(const Mat& phi, const Vec& z, double mu) {
    const Vec c = phi.transpose() * z;
    const double perp2 = (z - phi * c).squaredNorm();
    const double rho = std::sqrt(std::max(0.0, mu * mu - perp2));
    auto shrink = [&](double t) { return Vec(c.unaryExpr([t](double v) { return std::copysign(std::max(std::abs(v) - t, 0.0), v); })); };
    double lo = 0.0, hi = c.cwiseAbs().maxCoeff();
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if ((c - shrink(mid)).norm() > rho)
            hi = mid;
        else
            lo = mid;
    }
    return shrink(lo);
}

}  // namespace

TEST_CASE("projector complement examples") {
    Mat P(2, 1);
    P << 1.0, 0.0;
    const Mat U = projector_complement(P);
    CHECK((U - Eigen::Vector2d(0.0, 1.0).asDiagonal().toDenseMatrix()).norm() < 1e-14);
    std::mt19937_64 rng(1);
    const Mat S = gaussian_mat(4, 4, rng);
    CHECK(projector_complement(S).norm() < 1e-12);
    CHECK((projector_complement(Mat(5, 0)) - Mat::Identity(5, 5)).norm() == 0.0);
}

TEST_CASE("projector complement is idempotent and annihilates") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        const Mat P = gaussian_mat(12, 1 + rep % 5, rng);
        const Mat U = projector_complement(P);
        CHECK((U * U - U).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((U * P).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((U - U.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("optimal compensation error") {
    std::mt19937_64 rng(3);
    RegressionSplit s;
    s.xi = gaussian_mat(10, 2, rng);
    s.phi = gaussian_mat(10, 3, rng);
    s.z = s.xi * random_vec(2, rng);
    CHECK(optimal_compensation_error(s, Vec::Zero(3)).norm() < 1e-12);

    RegressionSplit e;
    e.xi = Mat(6, 0);
    e.phi = gaussian_mat(6, 2, rng);
    e.z = gaussian_mat(6, 1, rng).col(0);
    const Vec w = random_vec(2, rng);
    CHECK((optimal_compensation_error(e, w) - (e.z - e.phi * w)).norm() < 1e-14);

    for (int rep = 0; rep < 20; ++rep) {
        RegressionSplit r;
        r.xi = gaussian_mat(15, 3, rng);
        r.phi = gaussian_mat(15, 4, rng);
        r.z = gaussian_mat(15, 1, rng).col(0);
        const Vec om = random_vec(4, rng);
        const Vec res = r.z - r.phi * om;
        const Vec th = r.xi.colPivHouseholderQr().solve(res);
        const Vec ls = res - r.xi * th;
        CHECK((optimal_compensation_error(r, om) - ls).norm() <= 1e-10 * ls.norm());
    }
}

TEST_CASE("sigma_min_n examples") {
    CHECK(sigma_min_n(Mat::Identity(5, 5), 1) == doctest::Approx(1.0));
    CHECK(sigma_min_n(Mat::Identity(5, 5), 3) == doctest::Approx(1.0));
    std::mt19937_64 rng(4);
    Mat Q = gaussian_mat(6, 4, rng);
    Q.col(2) = Q.col(0);
    CHECK(sigma_min_n(Q, 2) < 1e-12);
    CHECK_THROWS_AS(sigma_min_n(Q, 0), ConfigError);
    CHECK_THROWS_AS(sigma_min_n(gaussian_mat(30, 21, rng), 2), CombinatorialBudgetExceeded);
}

TEST_CASE("sigma_min_n against random sparse-vector sampling") {
    std::mt19937_64 rng(5);
    Mat Q = gaussian_mat(8, 5, rng);
    Q = Q * Q.colwise().norm().cwiseInverse().asDiagonal();
    const double s = sigma_min_n(Q, 2);
    std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
    std::uniform_int_distribution<Index> col(0, 4);
    double sampled = 1e300;
    for (int t = 0; t < 200000; ++t) {
        const Index i = col(rng);
        Index j = col(rng);
        if (i == j) continue;
        const double a = ang(rng);
        Vec v = Vec::Zero(5);
        v(i) = std::cos(a);
        v(j) = std::sin(a);
        sampled = std::min(sampled, (Q * v).squaredNorm());
    }
    CHECK(sampled >= s - 1e-12);
    CHECK(sampled <= s + 1e-3);
}

TEST_CASE("sigma_min_n is non-increasing in n") {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 20; ++rep) {
        const Mat Q = gaussian_mat(10, 6, rng);
        double prev = 1e300;
        for (Index n = 1; n <= 6; ++n) {
            const double s = sigma_min_n(Q, n);
            CHECK(s <= prev * (1.0 + 1e-12));
            prev = s;
        }
    }
}

TEST_CASE("qn_norm examples") {
    const Mat I = Mat::Identity(2, 2);
    CHECK(qn_norm(Vec::Unit(2, 0), I, 1) == doctest::Approx(1.0));
    std::mt19937_64 rng(7);
    const Mat Q = gaussian_mat(7, 4, rng);
    const Vec x = gaussian_mat(7, 1, rng).col(0);
    CHECK(qn_norm(x, Q, 4) == doctest::Approx((Q.transpose() * x).norm()).epsilon(1e-12));
    const Mat B = projector_complement(Q);
    CHECK(qn_norm(B * x, Q, 2) < 1e-12);
    CHECK(qn_norm(x, Q, 1) <= qn_norm(x, Q, 2));
}

TEST_CASE("relaxed solution for a generous noise bound is zero") {
    std::mt19937_64 rng(8);
    const auto p = planted_instance(40, 2, 6, 2, 10.0, rng);
    RegressionSplit s = p.split;
    s.mu = projector_complement(s.xi).operator*(s.z).norm() * 1.01;
    const L1Solution sol = solve_l1_relaxed(s);
    CHECK(sol.omega.norm() == 0.0);
    CHECK_FALSE(sol.constraint_active);
}

TEST_CASE("relaxed solution with orthonormal columns is soft thresholding") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        const Mat Qf = gaussian_mat(12, 12, rng).householderQr().householderQ();
        RegressionSplit s;
        s.xi = Mat(12, 0);
        s.phi = Qf.leftCols(5);
        s.z = gaussian_mat(12, 1, rng).col(0);
        const double full = s.z.norm();
        const double perp = (s.z - s.phi * (s.phi.transpose() * s.z)).norm();
        s.mu = perp + 0.3 * (full - perp);
        const L1Solution sol = solve_l1_relaxed(s);
        const Vec oracle = soft_threshold_oracle(s.phi, s.z, s.mu);
        CHECK((sol.omega - oracle).norm() <= 1e-6 * std::max(1.0, oracle.norm()));
        CHECK(support_of(sol.omega, 1e-9) == support_of(oracle, 1e-9));
        CHECK(sol.constraint_active);
        CHECK(sol.residual == doctest::Approx(s.mu).epsilon(1e-6));
    }
}

TEST_CASE("relaxed solution concentrates on a planted support at high SNR") {
    std::mt19937_64 rng(10);
    for (int rep = 0; rep < 10; ++rep) {
        const auto p = planted_instance(40, 2, 6, 2, 200.0, rng);
        const CertificationRun run = certify_split(p.split);
        double on = 1e300, off = 0.0;
        for (Index i = 0; i < 6; ++i) {
            const bool in = std::find(p.support.begin(), p.support.end(), i) != p.support.end();
            if (in)
                on = std::min(on, std::abs(run.omega_hat(i)));
            else
                off = std::max(off, std::abs(run.omega_hat(i)));
        }
        CHECK(off < 0.05 * on);
        CHECK(relaxed_ls_residual(p.split, run.omega_hat) <= p.split.mu * (1.0 + 1e-6));
        CHECK((run.theta_hat - p.theta).norm() < 0.1);
    }
}

TEST_CASE("relaxed solver reports infeasibility") {
    std::mt19937_64 rng(11);
    RegressionSplit s;
    s.xi = gaussian_mat(10, 1, rng);
    s.phi = gaussian_mat(10, 2, rng);
    s.z = gaussian_mat(10, 1, rng).col(0);
    s.mu = 0.0;
    CHECK_THROWS_AS(solve_l1_relaxed(s), InfeasibleError);
}

TEST_CASE("verification objective does not exceed the relaxed one") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 10; ++rep) {
        const auto p = planted_instance(40, 2, 6, 2, 20.0, rng);
        const L1Solution rel = solve_l1_relaxed(p.split);
        if (support_of(rel.omega).empty()) continue;
        const L1Solution ver = solve_verification(p.split, rel.omega);
        CHECK(ver.omega.lpNorm<1>() <= rel.omega.lpNorm<1>() * (1.0 + 1e-8));
        CHECK(relaxed_ls_residual(p.split, ver.omega) <= p.split.mu * (1.0 + 1e-6));
    }
}

TEST_CASE("verification on a single column matches the interval endpoint") {
    std::mt19937_64 rng(13);
    RegressionSplit s;
    s.xi = Mat(8, 0);
    s.phi = gaussian_mat(8, 1, rng);
    s.z = 3.0 * s.phi.col(0) + 0.1 * gaussian_mat(8, 1, rng).col(0);
    const double pn2 = s.phi.squaredNorm();
    const double c = s.phi.col(0).dot(s.z) / pn2;
    const double perp2 = (s.z - c * s.phi.col(0)).squaredNorm();
    s.mu = std::sqrt(perp2 + 0.25 * pn2);
    const double rho = std::sqrt((s.mu * s.mu - perp2) / pn2);
    REQUIRE(c - rho > 0.0);
    const double lower_end = c - rho;
    const L1Solution ver = solve_verification(s, Vec::Constant(1, 0.5 * lower_end));
    CHECK(ver.omega(0) == doctest::Approx(lower_end).epsilon(1e-8));
    CHECK(ver.constraint_active);
}

TEST_CASE("verification with a generous bound is the sign-aligned minimum") {
    std::mt19937_64 rng(14);
    const auto p = planted_instance(40, 2, 6, 2, 20.0, rng);
    RegressionSplit s = p.split;
    s.mu = 1e6;
    Vec wh = Vec::Zero(6);
    wh(1) = 0.8;
    wh(4) = -0.3;
    const L1Solution ver = solve_verification(s, wh);
    Vec expect = Vec::Zero(6);
    expect(1) = 0.3;
    expect(4) = -0.3;
    CHECK((ver.omega - expect).norm() < 1e-9);
    CHECK_FALSE(ver.constraint_active);
}

TEST_CASE("noiseless sparse instance certifies and agrees with the l0 oracle") {
    std::mt19937_64 rng(15);
    for (int rep = 0; rep < 5; ++rep) {
        auto p = planted_instance(40, 2, 6, 2, std::numeric_limits<double>::infinity(), rng);
        p.split.mu = 1e-8;
        const CertificationRun run = certify_split(p.split);
        REQUIRE(run.certificate.has_value());
        CHECK(run.certificate->maximally_sparse);
        CHECK(run.certificate->support_equivalent);
        const L0Solution l0 = l0_oracle(p.split, 6);
        CHECK(l0.support == support_of(run.omega_hat));
        CHECK(l0.support == p.support);
    }
}

TEST_CASE("empty estimate is declined") {
    std::mt19937_64 rng(16);
    const auto p = planted_instance(40, 2, 6, 2, 20.0, rng);
    CHECK_THROWS_AS(certify(p.split, Vec::Zero(6), Vec::Zero(6)), NotActiveError);
    RegressionSplit s = p.split;
    s.mu = 1e9;
    const CertificationRun run = certify_split(s);
    CHECK_FALSE(run.certificate.has_value());
    CHECK_FALSE(run.declined.empty());
}

TEST_CASE("high noise gives a bound without a support claim") {
    std::mt19937_64 rng(17);
    int seen = 0;
    for (int rep = 0; rep < 20 && seen < 3; ++rep) {
        const auto p = planted_instance(40, 2, 8, 2, 1.5, rng);
        const CertificationRun run = certify_split(p.split);
        if (!run.certificate) continue;
        ++seen;
        const SparsityCertificate& c = *run.certificate;
        CHECK(std::isfinite(c.bound_v));
        CHECK(c.bound_v > 0.0);
        CHECK_FALSE(c.maximally_sparse);
        CHECK((c.kappa_bar > 0 || c.bound_v >= c.eta));
    }
    CHECK(seen > 0);
}

TEST_CASE("l0 oracle") {
    std::mt19937_64 rng(18);
    const auto p = planted_instance(30, 2, 6, 2, std::numeric_limits<double>::infinity(), rng);
    RegressionSplit s = p.split;
    s.mu = (projector_complement(s.xi) * s.z).norm();
    const L0Solution zero = l0_oracle(s, 6);
    CHECK(zero.found);
    CHECK(zero.support.empty());

    RegressionSplit exact = p.split;
    exact.mu = 1e-9;
    CHECK(l0_oracle(exact, 6).support == p.support);

    RegressionSplit tie;
    tie.xi = Mat(10, 0);
    tie.phi = gaussian_mat(10, 4, rng);
    tie.phi.col(3) = tie.phi.col(1);
    tie.z = 2.0 * tie.phi.col(1);
    tie.mu = 1e-9;
    const L0Solution t = l0_oracle(tie, 4);
    REQUIRE(t.support.size() == 1);
    CHECK(t.support[0] == 1);

    RegressionSplit big;
    big.xi = Mat(20, 0);
    big.phi = gaussian_mat(20, 16, rng);
    big.z = gaussian_mat(20, 1, rng).col(0);
    CHECK_THROWS_AS(l0_oracle(big, 3), CombinatorialBudgetExceeded);
}

TEST_CASE("certificates only claim supports the l0 oracle confirms") {
    std::mt19937_64 rng(19);
    int certified = 0;
    for (double snr : {5.0, 20.0, 100.0})
        for (int rep = 0; rep < 8; ++rep) {
            const auto p = planted_instance(40, 2, rep % 2 ? 8 : 6, 2, snr, rng);
            const CertificationRun run = certify_split(p.split);
            if (!run.certificate || !run.certificate->maximally_sparse) continue;
            ++certified;
            CHECK(l0_oracle(p.split, p.split.m()).support == support_of(run.omega_hat));
        }
    CHECK(certified > 0);
}

TEST_CASE("multi-step Jacobians match differences of the stacked prediction") {
    std::mt19937_64 rng(20);
    const ParametricModel m = cascaded_tanks(4.0);
    BlackBox bb = greybox::testing::random_blackbox(2, 1, rng);
    Dataset d;
    d.u = random_mat(1, 30, rng, 2, 7);
    d.z = random_mat(1, 30, rng, 2, 5);
    Vec k(4);
    k << 0.07, 0.03, 0.04, 0.04;
    Vec x0(2);
    x0 << 5.0, 3.0;
    const LinearizedSplit ls = linearize_multistep(m, bb, d, k, x0, 0.1);
    auto predict = [&](const Vec& kk, const BlackBox& b) {
        const Trajectory tr = simulate(m, x0, kk, d.u, &b);
        return Vec(tr.z.row(0).tail(29).transpose());
    };
    const Mat jt = fd_jacobian([&](const Vec& kk) { return predict(kk, bb); }, k);
    BlackBox tmp = bb;
    const Mat jw = fd_jacobian(
        [&](const Vec& om) {
            tmp.omega = Eigen::Map<const Mat>(om.data(), 2, bb.m());
            return predict(k, tmp);
        },
        Eigen::Map<const Vec>(bb.omega.data(), bb.n_omega()));
    CHECK(max_rel_error(ls.split.xi, jt) <= 1e-5);
    CHECK(max_rel_error(ls.split.phi, jw) <= 1e-5);
    CHECK((ls.prediction - predict(k, bb)).norm() < 1e-12);
    const Vec om = Eigen::Map<const Vec>(bb.omega.data(), bb.n_omega());
    const Vec resid = ls.split.z - ls.split.xi * k - ls.split.phi * om;
    CHECK((resid - (Vec(d.z.row(0).tail(29).transpose()) - ls.prediction)).norm() < 1e-10);
    CHECK(ls.split.mu == 0.1);
}

TEST_CASE("input-driven model linearizes to the single-step regression") {
    std::mt19937_64 rng(21);
    const auto inst = greybox::testing::input_driven_instance(41, rng);
    const RegressionSplit& single = inst.single;
    const LinearizedSplit ls = linearize_multistep(inst.model, inst.bb, inst.data, inst.theta, Vec::Zero(2), single.mu);
    CHECK((ls.split.xi - single.xi).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ls.split.phi - single.phi).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ls.split.z - single.z).cwiseAbs().maxCoeff() < 1e-12);

    const CertificationRun a = certify_split(single);
    const CertificationRun b = certify_split(ls.split);
    REQUIRE(a.certificate.has_value());
    REQUIRE(b.certificate.has_value());
    CHECK(a.certificate->support == b.certificate->support);
    CHECK(a.certificate->maximally_sparse == b.certificate->maximally_sparse);
    CHECK(a.certificate->bound_v == doctest::Approx(b.certificate->bound_v).epsilon(1e-9));
    CHECK((a.omega_hat - b.omega_hat).norm() < 1e-9);
}

TEST_CASE("linearized logistic toy agrees with the l0 oracle") {
    std::mt19937_64 rng(22);
    BlackBox bb(1, 0, BasisDictionary::from_names({"sigmoid", "sin", "cos", "linear"}));
    bb.w = random_mat(1, 4, rng, -1, 1);
    bb.b = random_mat(1, 4, rng, -0.5, 0.5);
    bb.omega.setZero();
    bb.omega(0, 1) = 0.05;
    Dataset d;
    d.u = Mat(0, 10);
    d.z = simulate(logistic_map(), Vec::Constant(1, 0.3), Vec::Constant(1, 3.2), d.u, &bb).z;
    const LinearizedSplit ls = linearize_multistep(logistic_map(), bb, d, Vec::Constant(1, 3.2), Vec::Constant(1, 0.3), 1e-6);
    const CertificationRun run = certify_split(ls.split);
    if (run.certificate && run.certificate->maximally_sparse)
        CHECK(l0_oracle(ls.split, 4).support == support_of(run.omega_hat));
    const L0Solution l0 = l0_oracle(ls.split, 4);
    CHECK(l0.found);
    CHECK(l0.support.size() <= 1);
}

TEST_CASE("feasible set samples and the exact worst case") {
    std::mt19937_64 rng(23);
    const auto p = planted_instance(20, 2, 4, 2, 5.0, rng);
    const std::vector<FeasibleSample> all = sample_feasible_set(p.split, std::nullopt, 2000, rng);
    const std::vector<FeasibleSample> sup = sample_feasible_set(p.split, p.support, 2000, rng);
    const double wc_all = worst_case_theta_error(p.split, p.theta, std::nullopt);
    const double wc_sup = worst_case_theta_error(p.split, p.theta, p.support);
    double seen_all = 0.0, seen_sup = 0.0;
    for (const FeasibleSample& f : all) {
        CHECK((p.split.z - p.split.xi * f.theta - p.split.phi * f.omega).norm() <= p.split.mu * (1.0 + 1e-9));
        seen_all = std::max(seen_all, (f.theta - p.theta).norm());
    }
    for (const FeasibleSample& f : sup) {
        for (Index i = 0; i < 4; ++i)
            if (std::find(p.support.begin(), p.support.end(), i) == p.support.end()) CHECK(f.omega(i) == 0.0);
        seen_sup = std::max(seen_sup, (f.theta - p.theta).norm());
    }
    CHECK(seen_all <= wc_all * (1.0 + 1e-9));
    CHECK(seen_sup <= wc_sup * (1.0 + 1e-9));
    CHECK(wc_sup <= wc_all * (1.0 + 1e-9));
    CHECK(seen_sup > 0.5 * wc_sup);
}

TEST_CASE("exact worst case matches brute force on a planar ellipse") {
    std::mt19937_64 rng(24);
    RegressionSplit s;
    s.xi = gaussian_mat(6, 2, rng);
    s.phi = Mat(6, 0);
    s.z = gaussian_mat(6, 1, rng).col(0);
    const Vec th_ls = s.xi.colPivHouseholderQr().solve(s.z);
    s.mu = (s.z - s.xi * th_ls).norm() * 1.5;
    const Vec ref = random_vec(2, rng, -2, 2);
    // Boundary of {||z - Xi t|| <= mu} parameterized through the Cholesky factor of Xi^T Xi.
    const Mat G = s.xi.transpose() * s.xi;
    const Mat L = G.llt().matrixL();
    const double r = std::sqrt(s.mu * s.mu - (s.z - s.xi * th_ls).squaredNorm());
    double brute = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double a = 2.0 * std::numbers::pi * i / 100000.0;
        const Vec v = Eigen::Vector2d(std::cos(a), std::sin(a)) * r;
        const Vec t = th_ls + L.transpose().triangularView<Eigen::Upper>().solve(v);
        brute = std::max(brute, (t - ref).norm());
    }
    CHECK(worst_case_theta_error(s, ref, std::vector<Index>{}) == doctest::Approx(brute).epsilon(1e-6));
}

TEST_CASE("column normalization") {
    std::mt19937_64 rng(25);
    const auto p = planted_instance(30, 2, 5, 2, 10.0, rng);
    const NormalizedSplit n = normalize_split(p.split);
    const Mat D = projector_complement(n.split.xi) * n.split.phi;
    for (Index i = 0; i < 5; ++i) CHECK(D.col(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    const Vec wn = n.scale.cwiseProduct(p.omega);
    CHECK((n.split.phi * wn - p.split.phi * p.omega).norm() < 1e-10);
}
