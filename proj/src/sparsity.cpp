#include "greybox/sparsity.hpp"

#include "greybox/blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace greybox {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double binomial(Index n, Index k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (Index i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return std::round(r);
}

// Advances idx to the next k-combination of {0..n-1} in lexicographic order.
bool next_combination(std::vector<Index>& idx, Index n) {
    const Index k = static_cast<Index>(idx.size());
    for (Index i = k - 1; i >= 0; --i) {
        if (idx[static_cast<std::size_t>(i)] < n - k + i) {
            ++idx[static_cast<std::size_t>(i)];
            for (Index j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
            return true;
        }
    }
    return false;
}

std::vector<Index> first_combination(Index k) {
    std::vector<Index> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), Index{0});
    return idx;
}

Mat columns(const Mat& A, const std::vector<Index>& idx) {
    Mat out(A.rows(), static_cast<Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Index>(c)) = A.col(idx[c]);
    return out;
}

double soft(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

// Box-constrained l1 problem: min ||w||_1 s.t. ||y - A w|| <= mu, lo <= w <= hi.
struct BoxL1 {
    const Mat& A;
    const Vec& y;
    Vec lo;
    Vec hi;
    Vec colsq;

    BoxL1(const Mat& A_, const Vec& y_, Vec lo_, Vec hi_)
        : A(A_), y(y_), lo(std::move(lo_)), hi(std::move(hi_)), colsq(A_.colwise().squaredNorm().transpose()) {}

    Vec clamp(const Vec& w) const { return w.cwiseMax(lo).cwiseMin(hi); }

    // Coordinate descent on 0.5||y - A w||^2 + tau ||w||_1 over the box.
    long descend(double tau, Vec& w, const SolverOptions& opts) const {
        Vec r = y - A * w;
        const double ynorm = std::max(1.0, y.norm());
        long sweeps = 0;
        for (; sweeps < opts.max_sweeps; ++sweeps) {
            double change = 0.0;
            for (Index j = 0; j < A.cols(); ++j) {
                double wn;
                if (colsq(j) <= 0.0) {
                    wn = std::clamp(0.0, lo(j), hi(j));
                } else {
                    const double rho = A.col(j).dot(r) + colsq(j) * w(j);
                    wn = std::clamp(soft(rho, tau) / colsq(j), lo(j), hi(j));
                }
                const double dlt = wn - w(j);
                if (dlt != 0.0) {
                    r.noalias() -= dlt * A.col(j);
                    w(j) = wn;
                    change = std::max(change, std::abs(dlt) * std::sqrt(colsq(j)));
                }
            }
            if (change <= opts.tolerance * 1e-3 * ynorm) {
                ++sweeps;
                break;
            }
        }
        return sweeps;
    }

    double residual(const Vec& w) const { return (y - A * w).norm(); }

    // Exact solve on the current active pattern; returns false if the pattern is inconsistent.
    bool polish(double mu, Vec& w, double& tau) const {
        const Index m = A.cols();
        std::vector<Index> free;
        for (Index j = 0; j < m; ++j)
            if (w(j) != 0.0 && w(j) > lo(j) && w(j) < hi(j)) free.push_back(j);
        if (free.empty()) return false;
        Vec fixed_w = w;
        for (Index j : free) fixed_w(j) = 0.0;
        const Vec yp = y - A * fixed_w;
        const Mat AF = columns(A, free);
        const Index nf = AF.cols();
        Vec s(nf);
        for (Index c = 0; c < nf; ++c) s(c) = w(free[static_cast<std::size_t>(c)]) > 0 ? 1.0 : -1.0;
        const Mat G = AF.transpose() * AF;
        Eigen::LDLT<Mat> ldlt(G);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-14 * std::max(1.0, G.diagonal().maxCoeff())))
            return false;
        const Vec wls = ldlt.solve(AF.transpose() * yp);
        const Vec rls = yp - AF * wls;
        const Vec q = ldlt.solve(s);
        const double c = s.dot(q);
        const double gap = mu * mu - rls.squaredNorm();
        if (!(c > 0) || gap < 0) return false;
        const double t = std::sqrt(gap / c);
        const Vec wf = wls - t * q;
        Vec cand = fixed_w;
        for (Index k = 0; k < nf; ++k) {
            const Index j = free[static_cast<std::size_t>(k)];
            if (wf(k) * s(k) <= 0.0 || wf(k) < lo(j) || wf(k) > hi(j)) return false;
            cand(j) = wf(k);
        }
        const Vec r = y - A * cand;
        const double slack = 1e-9 * std::max(1.0, t);
        for (Index j = 0; j < m; ++j) {
            if (std::find(free.begin(), free.end(), j) != free.end()) continue;
            const double corr = A.col(j).dot(r);
            const double v = cand(j);
            if (v == 0.0 && lo(j) < 0.0 && hi(j) > 0.0) {
                if (std::abs(corr) > t + slack) return false;
            } else if (v <= lo(j)) {
                const double d = lo(j) >= 0.0 ? 1.0 : -1.0;
                if (-corr + t * d < -slack) return false;
            } else if (v >= hi(j)) {
                const double d = hi(j) > 0.0 ? 1.0 : -1.0;
                if (-corr + t * d > slack) return false;
            }
        }
        w = cand;
        tau = t;
        return true;
    }

    L1Solution solve(double mu, const Vec& w0, bool has_box, const SolverOptions& opts) const {
        const Index m = A.cols();
        L1Solution out;
        const Vec wmin = clamp(Vec::Zero(m));
        const double rmin = residual(wmin);
        if (rmin <= mu) {
            out.omega = wmin;
            out.residual = rmin;
            out.constraint_active = std::abs(rmin - mu) <= opts.activity_tolerance * std::max(mu, 1e-300);
            out.multiplier = kInf;
            return out;
        }
        // Smallest achievable residual.
        Vec wbest;
        if (!has_box) {
            wbest = A.completeOrthogonalDecomposition().solve(y);
        } else {
            wbest = clamp(w0);
            out.sweeps += descend(0.0, wbest, opts);
        }
        const double rbest = residual(wbest);
        if (rbest > mu * (1.0 + 1e-12) + 1e-15)
            throw InfeasibleError("l1 problem infeasible: smallest residual " + std::to_string(rbest) +
                                  " exceeds mu " + std::to_string(mu));

        double tau_hi = 2.0 * (A.transpose() * (y - A * wmin)).cwiseAbs().maxCoeff() + 1e-300;
        double tau_lo = tau_hi * 1e-16;
        Vec w = clamp(w0);
        Vec w_lo = wbest;
        double r_lo = rbest;
        for (int it = 0; it < opts.bisection_steps; ++it) {
            const double tau = std::sqrt(tau_lo * tau_hi);
            out.sweeps += descend(tau, w, opts);
            const double r = residual(w);
            if (r > mu) {
                tau_hi = tau;
            } else {
                tau_lo = tau;
                w_lo = w;
                r_lo = r;
            }
            if (tau_hi / tau_lo - 1.0 < 1e-15 || std::abs(r - mu) <= 1e-14 * mu) break;
        }
        out.omega = w_lo;
        out.residual = r_lo;
        out.multiplier = tau_lo;
        Vec wp = w_lo;
        double tp = tau_lo;
        if (polish(mu, wp, tp)) {
            const double rp = residual(wp);
            if (rp <= mu * (1.0 + 1e-12)) {
                out.omega = wp;
                out.residual = rp;
                out.multiplier = tp;
            }
        }
        out.constraint_active = std::abs(out.residual - mu) <= opts.activity_tolerance * std::max(mu, 1e-300);
        return out;
    }
};

struct Reduced {
    Mat ups;
    Mat A;
    Vec y;
};

Reduced reduce(const RegressionSplit& split) {
    split.validate();
    Reduced r;
    r.ups = projector_complement(split.xi);
    r.A = r.ups * split.phi;
    r.y = r.ups * split.z;
    return r;
}

Vec recover_theta(const RegressionSplit& split, const Vec& omega) {
    if (split.xi.cols() == 0) return Vec(0);
    return split.xi.completeOrthogonalDecomposition().solve(split.z - split.phi * omega);
}

}  // namespace

void RegressionSplit::validate() const {
    if (phi.rows() != z.size()) throw ConfigError("split: Phi rows must match z");
    if (xi.cols() > 0 && xi.rows() != z.size()) throw ConfigError("split: Xi rows must match z");
    if (xi.cols() > z.size()) throw ConfigError("split: more protected columns than samples");
    if (mu < 0) throw ConfigError("split: mu must be non-negative");
}

std::vector<Index> support_of(const Vec& v, double tol) {
    std::vector<Index> s;
    for (Index i = 0; i < v.size(); ++i)
        if (std::abs(v(i)) > tol) s.push_back(i);
    return s;
}

Mat projector_complement(const Mat& P) {
    const Index T = P.rows();
    Mat I = Mat::Identity(T, T);
    if (P.cols() == 0 || T == 0) return I;
    Eigen::JacobiSVD<Mat> svd(P, Eigen::ComputeThinU);
    const Vec& s = svd.singularValues();
    const double tol = static_cast<double>(std::max(P.rows(), P.cols())) * std::numeric_limits<double>::epsilon() *
                       (s.size() ? s(0) : 0.0);
    Index r = 0;
    while (r < s.size() && s(r) > tol) ++r;
    const Mat U = svd.matrixU().leftCols(r);
    Mat ups = I - U * U.transpose();
    return 0.5 * (ups + ups.transpose());
}

Vec optimal_compensation_error(const RegressionSplit& split, const Vec& omega) {
    split.validate();
    if (omega.size() != split.m()) throw ConfigError("optimal_compensation_error: omega has wrong length");
    return projector_complement(split.xi) * (split.z - split.phi * omega);
}

double sigma_min_n(const Mat& Q, Index n) {
    const Index m = Q.cols();
    if (n < 1 || n > m) throw ConfigError("sigma_min_n: need 1 <= n <= m");
    if (m > 20) throw CombinatorialBudgetExceeded("sigma_min_n: m > 20");
    if (binomial(m, n) > 1e6) throw CombinatorialBudgetExceeded("sigma_min_n: C(m, n) exceeds 1e6");
    const Mat G = Q.transpose() * Q;
    if (n == 1) return G.diagonal().minCoeff();
    double best = kInf;
    std::vector<Index> idx = first_combination(n);
    Mat sub(n, n);
    Eigen::SelfAdjointEigenSolver<Mat> es;
    do {
        for (Index a = 0; a < n; ++a)
            for (Index b = 0; b < n; ++b) sub(a, b) = G(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        es.compute(sub, Eigen::EigenvaluesOnly);
        best = std::min(best, es.eigenvalues()(0));
    } while (next_combination(idx, m));
    return std::max(best, 0.0);
}

double qn_norm(const Vec& x, const Mat& Q, Index n) {
    const Index m = Q.cols();
    if (n < 1 || n > m) throw ConfigError("qn_norm: need 1 <= n <= m");
    if (x.size() != Q.rows()) throw ConfigError("qn_norm: dimension mismatch");
    Vec c = (Q.transpose() * x).cwiseAbs2();
    std::vector<double> v(c.data(), c.data() + c.size());
    std::partial_sort(v.begin(), v.begin() + n, v.end(), std::greater<double>());
    return std::sqrt(std::accumulate(v.begin(), v.begin() + n, 0.0));
}

NormalizedSplit normalize_split(const RegressionSplit& split) {
    split.validate();
    const Mat D = projector_complement(split.xi) * split.phi;
    NormalizedSplit out;
    out.scale = D.colwise().norm().transpose();
    for (Index i = 0; i < out.scale.size(); ++i)
        if (!(out.scale(i) > 1e-14)) out.scale(i) = 1.0;
    out.split = split;
    out.split.phi = split.phi * out.scale.cwiseInverse().asDiagonal();
    return out;
}

L1Solution solve_l1_relaxed(const RegressionSplit& split, const SolverOptions& opts) {
    const Reduced r = reduce(split);
    const Index m = split.m();
    BoxL1 prob(r.A, r.y, Vec::Constant(m, -kInf), Vec::Constant(m, kInf));
    L1Solution sol = prob.solve(split.mu, Vec::Zero(m), false, opts);
    sol.theta = recover_theta(split, sol.omega);
    return sol;
}

L1Solution solve_verification(const RegressionSplit& split, const Vec& omega_hat, double margin,
                              const SolverOptions& opts) {
    const Index m = split.m();
    if (omega_hat.size() != m) throw ConfigError("solve_verification: omega_hat has wrong length");
    const std::vector<Index> supp = support_of(omega_hat);
    if (supp.empty()) throw NotActiveError("solve_verification: omega_hat has empty support");
    double eta = kInf;
    for (Index i : supp) eta = std::min(eta, std::abs(omega_hat(i)));
    const double off = std::max(eta - margin, 0.0);
    Vec lo = Vec::Constant(m, -off), hi = Vec::Constant(m, off);
    for (Index i : supp) {
        if (omega_hat(i) > 0) {
            lo(i) = eta;
            hi(i) = kInf;
        } else {
            lo(i) = -kInf;
            hi(i) = -eta;
        }
    }
    const Reduced r = reduce(split);
    BoxL1 prob(r.A, r.y, lo, hi);
    L1Solution sol = prob.solve(split.mu, omega_hat, true, opts);
    sol.theta = recover_theta(split, sol.omega);
    return sol;
}

SparsityCertificate certify(const RegressionSplit& split, const Vec& omega_hat, const Vec& omega_v,
                            double activity_tolerance) {
    split.validate();
    const Index m = split.m();
    if (omega_hat.size() != m || omega_v.size() != m) throw ConfigError("certify: coefficient vectors have wrong length");
    const Mat ups = projector_complement(split.xi);
    const Mat D = ups * split.phi;
    SparsityCertificate c;
    c.column_norms = D.colwise().norm().transpose();
    Vec scale = c.column_norms;
    for (Index i = 0; i < m; ++i)
        if (!(scale(i) > 1e-14)) scale(i) = 1.0;
    const Mat Dn = D * scale.cwiseInverse().asDiagonal();
    const Vec wh = scale.cwiseProduct(omega_hat);
    const Vec wv = scale.cwiseProduct(omega_v);

    c.support = support_of(omega_hat);
    c.M = static_cast<Index>(c.support.size());
    if (c.M == 0) throw NotActiveError("certify: omega_hat has empty support, eta undefined");
    c.eta = kInf;
    for (Index i : c.support) c.eta = std::min(c.eta, std::abs(wh(i)));
    c.mu = split.mu;

    const Vec y = ups * split.z;
    const Vec ev = y - D * omega_v;
    const Vec eh = y - D * omega_hat;
    c.residual_v = ev.norm();
    if (std::abs(c.residual_v - split.mu) > activity_tolerance * std::max(split.mu, 1e-300))
        throw NotActiveError("certify: norm constraint inactive (residual " + std::to_string(c.residual_v) +
                             ", mu " + std::to_string(split.mu) + ")");

    c.n = std::min<Index>(2 * c.M, m);
    c.sigma2_min = sigma_min_n(Dn, c.n);
    c.qn1_v = qn_norm(ev, Dn, 1);
    c.qn2M_v = qn_norm(ev, Dn, c.n);
    c.qn1_hat = qn_norm(eh, Dn, 1);
    c.qn2M_hat = qn_norm(eh, Dn, c.n);
    const bool degenerate = !(c.sigma2_min > 0);
    c.bound_v = degenerate ? kInf : (c.qn1_v + c.qn2M_v) / c.sigma2_min;
    c.bound_hat = degenerate ? kInf : (c.qn1_hat + c.qn2M_hat) / c.sigma2_min;
    for (Index i = 0; i < m; ++i)
        if (std::abs(wv(i)) > c.bound_v) c.lambda_set.push_back(i);
    c.kappa_bar = std::max<Index>(0, c.M - static_cast<Index>(c.lambda_set.size()));
    c.support_equivalent = c.bound_hat < c.eta;
    c.maximally_sparse = c.bound_v < c.eta && c.kappa_bar == 0;
    return c;
}

CertificationRun certify_split(const RegressionSplit& split, const std::optional<Vec>& omega_hat,
                               const SolverOptions& opts) {
    CertificationRun run;
    run.normalized = normalize_split(split);
    const RegressionSplit& ns = run.normalized.split;
    Vec wh;
    if (omega_hat) {
        if (omega_hat->size() != split.m()) throw ConfigError("certify_split: omega_hat has wrong length");
        wh = run.normalized.scale.cwiseProduct(*omega_hat);
        run.relaxed.omega = wh;
        run.relaxed.theta = recover_theta(ns, wh);
        run.relaxed.residual = optimal_compensation_error(ns, wh).norm();
        run.relaxed.constraint_active =
            std::abs(run.relaxed.residual - ns.mu) <= opts.activity_tolerance * std::max(ns.mu, 1e-300);
    } else {
        run.relaxed = solve_l1_relaxed(ns, opts);
        wh = run.relaxed.omega;
        const double top = wh.size() ? wh.cwiseAbs().maxCoeff() : 0.0;
        for (Index i = 0; i < wh.size(); ++i)
            if (std::abs(wh(i)) <= opts.support_tolerance * top) wh(i) = 0.0;
        run.relaxed.omega = wh;
    }
    run.omega_hat = wh.cwiseQuotient(run.normalized.scale);
    run.theta_hat = run.relaxed.theta;
    if (!omega_hat && support_of(wh).empty()) {
        run.declined = "relaxed solution is zero: the physical columns alone fit within mu";
        return run;
    }
    try {
        run.verification = solve_verification(ns, wh, 1e-9, opts);
        SparsityCertificate c = certify(ns, wh, run.verification.omega, opts.activity_tolerance);
        c.column_norms = run.normalized.scale;
        run.certificate = c;
    } catch (const NotActiveError& e) {
        run.declined = e.what();
    } catch (const InfeasibleError& e) {
        run.declined = e.what();
    }
    return run;
}

L0Solution l0_oracle(const RegressionSplit& split, Index max_support) {
    const Index m = split.m();
    if (m > 15) throw CombinatorialBudgetExceeded("l0_oracle: m > 15");
    const Reduced r = reduce(split);
    L0Solution out;
    const double ry = r.y.norm();
    if (ry <= split.mu) {
        out.found = true;
        out.omega = Vec::Zero(m);
        out.residual = ry;
        return out;
    }
    for (Index s = 1; s <= std::min(max_support, m); ++s) {
        double best = kInf;
        std::vector<Index> best_idx;
        Vec best_coef;
        std::vector<Index> idx = first_combination(s);
        do {
            const Mat As = columns(r.A, idx);
            const Vec coef = As.colPivHouseholderQr().solve(r.y);
            const double res = (r.y - As * coef).norm();
            if (res <= split.mu && res < best) {
                best = res;
                best_idx = idx;
                best_coef = coef;
            }
        } while (next_combination(idx, m));
        if (!best_idx.empty()) {
            out.found = true;
            out.support = best_idx;
            out.residual = best;
            out.omega = Vec::Zero(m);
            for (std::size_t c = 0; c < best_idx.size(); ++c) out.omega(best_idx[c]) = best_coef(static_cast<Index>(c));
            return out;
        }
    }
    return out;
}

LinearizedSplit linearize_multistep(const ParametricModel& model, const BlackBox& bb, const Dataset& data,
                                    const Vec& theta, const Vec& x0, double mu) {
    const Dimensions& d = model.dims();
    data.validate(d);
    if (bb.nx() != d.nx || bb.nu() != d.nu) throw ConfigError("linearize_multistep: black-box dimensions mismatch");
    const Index T = data.horizon();
    if (T < 2) throw ConfigError("linearize_multistep: horizon must be at least 2");
    const Index no = bb.n_omega();
    const Index nv = d.ntheta + bb.n_weights();
    const Index rows = (T - 1) * d.nz;

    LinearizedSplit out;
    RegressionSplit& s = out.split;
    s.xi.resize(rows, d.ntheta);
    s.phi.resize(rows, no);
    s.z.resize(rows);
    s.mu = mu;
    out.prediction.resize(rows);

    Mat lambda = Mat::Zero(d.nx, nv);
    Vec x = x0;
    for (Index k = 0; k + 1 < T; ++k) {
        const Vec u = data.u.col(k);
        const ModelJacobians J = model.jacobians(x, u, theta);
        const DeltaJacobians dj = delta_jacobians(bb, x, u);
        Mat jxv(d.nx, nv);
        jxv << J.ftheta, dj.dw;
        lambda = (J.fx + dj.dx) * lambda + jxv;
        x = model.step(x, u, theta) + eval_delta(bb, x, u);
        if (!x.allFinite()) throw EscapeError(static_cast<long>(k + 1), "linearize_multistep: state escaped");
        const Mat hx = model.jacobians(x, data.u.col(k + 1), theta).hx;
        const Mat dz = hx * lambda;
        const Index r0 = k * d.nz;
        s.xi.middleRows(r0, d.nz) = dz.leftCols(d.ntheta);
        s.phi.middleRows(r0, d.nz) = dz.middleCols(d.ntheta, no);
        out.prediction.segment(r0, d.nz) = model.observe(x);
        s.z.segment(r0, d.nz) = data.z.col(k + 1);
    }
    const Vec omega = Eigen::Map<const Vec>(bb.omega.data(), no);
    s.z = s.z - out.prediction + s.xi * theta + s.phi * omega;
    return out;
}

namespace {

struct Ellipsoid {
    Vec center;      // [theta; omega_S]
    Mat half_axes;   // center + half_axes * v, ||v|| <= 1
    Index ntheta = 0;
    std::vector<Index> cols;
};

Ellipsoid feasible_ellipsoid(const RegressionSplit& split, const std::optional<std::vector<Index>>& support) {
    split.validate();
    Ellipsoid e;
    e.ntheta = split.xi.cols();
    if (support) {
        e.cols = *support;
    } else {
        e.cols.resize(static_cast<std::size_t>(split.m()));
        std::iota(e.cols.begin(), e.cols.end(), Index{0});
    }
    const Index ns = static_cast<Index>(e.cols.size());
    Mat K(split.rows(), e.ntheta + ns);
    K.leftCols(e.ntheta) = split.xi;
    K.rightCols(ns) = columns(split.phi, e.cols);
    Eigen::ColPivHouseholderQR<Mat> qr(K);
    if (qr.rank() < K.cols()) throw InfeasibleError("feasible set is unbounded (rank-deficient regressors)");
    e.center = qr.solve(split.z);
    const double r0 = (split.z - K * e.center).squaredNorm();
    const double rho2 = split.mu * split.mu - r0;
    if (rho2 < 0) throw InfeasibleError("feasible set is empty");
    Eigen::LLT<Mat> llt(K.transpose() * K);
    const Mat Rinv = llt.matrixU().solve(Mat::Identity(K.cols(), K.cols()));
    e.half_axes = std::sqrt(rho2) * Rinv;
    return e;
}

}  // namespace

std::vector<FeasibleSample> sample_feasible_set(const RegressionSplit& split,
                                                const std::optional<std::vector<Index>>& support,
                                                std::size_t count, std::mt19937_64& rng) {
    const Ellipsoid e = feasible_ellipsoid(split, support);
    const Index dim = e.center.size();
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<FeasibleSample> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        Vec v(dim);
        for (Index i = 0; i < dim; ++i) v(i) = nd(rng);
        const double nrm = v.norm();
        if (nrm > 0) v *= std::pow(ud(rng), 1.0 / static_cast<double>(dim)) / nrm;
        const Vec p = e.center + e.half_axes * v;
        FeasibleSample fs;
        fs.theta = p.head(e.ntheta);
        fs.omega = Vec::Zero(split.m());
        for (std::size_t c = 0; c < e.cols.size(); ++c) fs.omega(e.cols[c]) = p(e.ntheta + static_cast<Index>(c));
        out.push_back(std::move(fs));
    }
    return out;
}

double worst_case_theta_error(const RegressionSplit& split, const Vec& theta_ref,
                              const std::optional<std::vector<Index>>& support) {
    const Ellipsoid e = feasible_ellipsoid(split, support);
    if (theta_ref.size() != e.ntheta) throw ConfigError("worst_case_theta_error: theta_ref has wrong length");
    const Vec a = e.center.head(e.ntheta) - theta_ref;
    const Mat B = e.half_axes.topRows(e.ntheta);
    // max ||a + B v|| over ||v|| <= 1 via the secular equation in the eigenbasis of B^T B.
    Eigen::SelfAdjointEigenSolver<Mat> es(B.transpose() * B);
    const Vec s = es.eigenvalues();
    const Mat V = es.eigenvectors();
    const Vec c = V.transpose() * (B.transpose() * a);
    const Index top = s.size() - 1;
    const double smax = s(top);
    auto objective = [&](const Vec& vv) { return (a + B * (V * vv)).norm(); };
    auto phi = [&](double lam) {
        double t = 0.0;
        for (Index i = 0; i < s.size(); ++i) t += c(i) * c(i) / ((lam - s(i)) * (lam - s(i)));
        return t;
    };
    double best = 0.0;
    const double cn = c.norm();
    if (cn > 0) {
        double lo = smax, hi = smax + cn;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (phi(mid) > 1.0)
                lo = mid;
            else
                hi = mid;
        }
        Vec vv(s.size());
        for (Index i = 0; i < s.size(); ++i) vv(i) = c(i) / (hi - s(i));
        if (vv.norm() > 0) vv /= std::max(1.0, vv.norm());
        best = objective(vv);
    }
    // Hard case: gradient orthogonal to the leading axis.
    {
        Vec vv = Vec::Zero(s.size());
        for (Index i = 0; i < top; ++i)
            if (smax - s(i) > 1e-14 * std::max(1.0, smax)) vv(i) = c(i) / (smax - s(i));
        const double rest = vv.squaredNorm();
        if (rest <= 1.0) {
            vv(top) = std::sqrt(1.0 - rest);
            best = std::max(best, objective(vv));
            vv(top) = -vv(top);
            best = std::max(best, objective(vv));
        }
    }
    return best;
}

}  // namespace greybox
