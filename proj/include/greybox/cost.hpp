#pragma once

#include "greybox/common.hpp"
#include "greybox/dynamics.hpp"

#include <functional>
#include <optional>
#include <string>

namespace greybox {

class BlackBox;

/// squared_norm: sum exp(2a(v-ub)) + exp(2a(lb-v)); plain_sum: sum exp(a(v-ub)) + exp(a(lb-v)).
enum class BarrierForm { squared_norm, plain_sum };

struct Bounds {
    std::optional<Vec> lower;
    std::optional<Vec> upper;
    bool empty() const { return !lower && !upper; }
};

/// Local loss L(e_k) with horizon T; gradient is with respect to e_k.
struct LocalLoss {
    std::string name = "squared_error";
    std::function<double(const Vec& e, Index T)> value;
    std::function<Vec(const Vec& e, Index T)> gradient;
};

/// (1/T) ||e||^2.
LocalLoss squared_error_loss();

/// Equality constraint q(x, theta) = 0 with Jacobians; penalized as nu ||q||^2.
struct EqualityConstraint {
    std::function<Vec(const Vec& x, const Vec& theta)> q;
    std::function<Mat(const Vec& x, const Vec& theta)> dq_dx;
    std::function<Mat(const Vec& x, const Vec& theta)> dq_dtheta;
};

struct CostSpec {
    LocalLoss loss = squared_error_loss();
    double lambda = 0.0;  ///< inequality (barrier) weight
    double nu = 0.0;      ///< equality weight
    double gamma = 0.0;   ///< l1 weight on Omega
    double beta = 10.0;   ///< softplus sharpness
    double alpha = 1.0;   ///< barrier sharpness
    Bounds theta_bounds;
    Bounds state_bounds;
    BarrierForm theta_barrier = BarrierForm::squared_norm;
    BarrierForm state_barrier = BarrierForm::squared_norm;
    std::optional<EqualityConstraint> equality;

    void validate(Index ntheta, Index nx) const;
};

double softplus_l1(const Vec& v, double beta);
Vec softplus_l1_gradient(const Vec& v, double beta);

double exp_barrier(const Vec& v, const Bounds& bounds, double alpha, BarrierForm form);
Vec exp_barrier_gradient(const Vec& v, const Bounds& bounds, double alpha, BarrierForm form);

double exp_barrier_theta(const Vec& theta, const Bounds& bounds, double alpha,
                         BarrierForm form = BarrierForm::squared_norm);
double exp_barrier_state(const Vec& x, const Bounds& bounds, double alpha,
                         BarrierForm form = BarrierForm::squared_norm);

/// Loss at one step; zero when the sample is not observed.
double local_loss(const CostSpec& spec, const Vec& e, Index T, bool observed = true);

struct StepPenalty {
    double inequality = 0.0;  ///< p(x, theta), unweighted
    double equality = 0.0;    ///< ||q(x, theta)||^2, unweighted
};
StepPenalty step_penalty(const CostSpec& spec, const Vec& x, const Vec& theta);

struct CostBreakdown {
    double loss = 0.0;
    double inequality = 0.0;      ///< lambda * sum_k p
    double equality = 0.0;        ///< nu * sum_k q^2
    double regularization = 0.0;  ///< gamma * T * softplus_l1(vec Omega)
    double total = 0.0;
    Vec loss_per_step;
    Vec penalty_per_step;  ///< weighted inequality + equality + regularization per step
};

CostBreakdown total_cost(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                         const Dataset& data, const Vec& theta, const Vec& x0,
                         const SimulationOptions& sim = {});

struct PenaltyGradients {
    Vec dp_dx;
    Vec dp_dtheta;
    Vec dq2_dx;
    Vec dq2_dtheta;
    Vec dreg_domega;  ///< gradient of softplus_l1 over vec(Omega); empty without black box
};

/// Unweighted gradients of p, ||q||^2 and softplus_l1.
PenaltyGradients penalty_gradients(const CostSpec& spec, const Vec& x, const Vec& theta,
                                   const Mat* omega = nullptr);

}  // namespace greybox
