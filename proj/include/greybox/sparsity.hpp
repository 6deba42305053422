#pragma once

#include "greybox/blackbox.hpp"
#include "greybox/common.hpp"
#include "greybox/dynamics.hpp"

#include <optional>
#include <random>
#include <vector>

namespace greybox {

/// z ~ Xi theta + Phi omega with ||noise|| <= mu. Xi may have zero columns.
struct RegressionSplit {
    Mat xi;
    Mat phi;
    Vec z;
    double mu = 0.0;

    Index rows() const { return z.size(); }
    Index m() const { return phi.cols(); }
    void validate() const;
};

/// I - P P^+ via SVD pseudo-inverse.
Mat projector_complement(const Mat& P);

/// Upsilon(Xi) (z - Phi omega).
Vec optimal_compensation_error(const RegressionSplit& split, const Vec& omega);

/// Minimum over supports |S| = n of lambda_min(Q_S^T Q_S). Exhaustive; m <= 20, C(m, n) <= 1e6.
double sigma_min_n(const Mat& Q, Index n);

/// sqrt of the sum of the n largest (x^T q_i)^2.
double qn_norm(const Vec& x, const Mat& Q, Index n);

/// Column scaling so that Upsilon(Xi) Phi has unit columns. Coefficients map as omega_n = scale .* omega.
struct NormalizedSplit {
    RegressionSplit split;
    Vec scale;
};
NormalizedSplit normalize_split(const RegressionSplit& split);

struct L1Solution {
    Vec theta;
    Vec omega;
    double residual = 0.0;     ///< ||Upsilon (z - Phi omega)||
    bool constraint_active = false;
    double multiplier = 0.0;   ///< l1 weight tau of the equivalent penalized problem
    long sweeps = 0;
};

struct SolverOptions {
    long max_sweeps = 100000;
    double tolerance = 1e-10;
    int bisection_steps = 200;
    double activity_tolerance = 1e-6;
    double support_tolerance = 1e-12;  ///< relative magnitude below which coefficients read as zero
};

/// min ||omega||_1 s.t. ||Upsilon(Xi)(z - Phi omega)|| <= mu.
L1Solution solve_l1_relaxed(const RegressionSplit& split, const SolverOptions& opts = {});

/// min ||omega||_1 s.t. sign(w_i) omega_i >= eta on supp(w), |omega_i| <= eta - margin off it,
/// and ||Upsilon(Xi)(z - Phi omega)|| <= mu, with eta the smallest nonzero magnitude of w.
L1Solution solve_verification(const RegressionSplit& split, const Vec& omega_hat, double margin = 1e-9,
                              const SolverOptions& opts = {});

struct SparsityCertificate {
    Index M = 0;
    double eta = 0.0;
    Index n = 0;                 ///< support size used for sigma and the (Q,n)-norm, min(2M, m)
    double sigma2_min = 0.0;
    double qn1_v = 0.0;          ///< ||e*(omega_v)||_(D,1)
    double qn2M_v = 0.0;         ///< ||e*(omega_v)||_(D,n)
    double qn1_hat = 0.0;
    double qn2M_hat = 0.0;
    double bound_v = 0.0;        ///< (qn1_v + qn2M_v) / sigma2_min
    double bound_hat = 0.0;
    double residual_v = 0.0;
    double mu = 0.0;
    std::vector<Index> lambda_set;
    std::vector<Index> support;
    Index kappa_bar = 0;
    bool support_equivalent = false;
    bool maximally_sparse = false;
    Vec column_norms;            ///< norms of the columns of Upsilon(Xi) Phi before normalization
    std::string sign_convention = "sign-aligned magnitude bound";
};

/// Certificate for omega_hat given the verification solution. Works in normalized
/// coordinates; throws NotActiveError when the norm constraint is inactive or omega_hat is 0.
SparsityCertificate certify(const RegressionSplit& split, const Vec& omega_hat, const Vec& omega_v,
                            double activity_tolerance = 1e-6);

/// Normalize, solve the relaxed problem (unless omega_hat is supplied in original
/// coordinates), solve the verification problem, and certify.
struct CertificationRun {
    NormalizedSplit normalized;
    L1Solution relaxed;       ///< normalized coordinates
    L1Solution verification;  ///< normalized coordinates
    Vec omega_hat;            ///< original coordinates
    Vec theta_hat;
    std::optional<SparsityCertificate> certificate;
    std::string declined;     ///< reason when certificate is empty
};
CertificationRun certify_split(const RegressionSplit& split, const std::optional<Vec>& omega_hat = std::nullopt,
                               const SolverOptions& opts = {});

struct L0Solution {
    bool found = false;
    Vec omega;
    std::vector<Index> support;
    double residual = 0.0;
};

/// Smallest support meeting the residual bound. Ties: smaller residual, then lexicographic.
L0Solution l0_oracle(const RegressionSplit& split, Index max_support);

/// Stacked multi-step predictor z_1..z_{T-1} linearized at (theta, Omega) with x0 fixed.
/// J_theta and J_Omega come from the sensitivity recursion; z_l = z - F + J_theta theta + J_Omega omega.
struct LinearizedSplit {
    RegressionSplit split;
    Vec prediction;  ///< stacked F at the linearization point
};
LinearizedSplit linearize_multistep(const ParametricModel& model, const BlackBox& bb, const Dataset& data,
                                    const Vec& theta, const Vec& x0, double mu);

/// Feasible parameter set samples: (theta, omega) with ||z - Xi theta - Phi omega|| <= mu and,
/// when support is given, omega restricted to it.
struct FeasibleSample {
    Vec theta;
    Vec omega;
};
std::vector<FeasibleSample> sample_feasible_set(const RegressionSplit& split,
                                                const std::optional<std::vector<Index>>& support,
                                                std::size_t count, std::mt19937_64& rng);

/// Exact max ||theta - theta_ref|| over the feasible set (optionally support-restricted).
double worst_case_theta_error(const RegressionSplit& split, const Vec& theta_ref,
                              const std::optional<std::vector<Index>>& support);

std::vector<Index> support_of(const Vec& v, double tol = 0.0);

}  // namespace greybox
