#include "greybox/cost.hpp"

#include "greybox/blackbox.hpp"

#include <cmath>

namespace greybox {

LocalLoss squared_error_loss() {
    LocalLoss L;
    L.name = "squared_error";
    L.value = [](const Vec& e, Index T) { return e.squaredNorm() / static_cast<double>(T); };
    L.gradient = [](const Vec& e, Index T) { return Vec(2.0 * e / static_cast<double>(T)); };
    return L;
}

namespace {

void check_bounds(const Bounds& b, Index n, const char* what) {
    if (b.lower && b.lower->size() != n) throw ConfigError(std::string(what) + ": lower bound has wrong size");
    if (b.upper && b.upper->size() != n) throw ConfigError(std::string(what) + ": upper bound has wrong size");
    if (b.lower && b.upper && ((*b.lower).array() > (*b.upper).array()).any())
        throw ConfigError(std::string(what) + ": lower bound exceeds upper bound");
}

double form_scale(BarrierForm f) { return f == BarrierForm::squared_norm ? 2.0 : 1.0; }

}  // namespace

void CostSpec::validate(Index ntheta, Index nx) const {
    if (lambda < 0 || nu < 0 || gamma < 0 || alpha < 0 || beta <= 0)
        throw ConfigError("cost: weights must be non-negative and beta positive");
    if (!loss.value || !loss.gradient) throw ConfigError("cost: local loss needs value and gradient");
    check_bounds(theta_bounds, ntheta, "theta bounds");
    check_bounds(state_bounds, nx, "state bounds");
    if (lambda > 0 && !(alpha > 0) && (!theta_bounds.empty() || !state_bounds.empty()))
        throw ConfigError("cost: barrier sharpness must be positive");
    if (equality && (!equality->q || !equality->dq_dx || !equality->dq_dtheta))
        throw ConfigError("cost: equality constraint needs q and both Jacobians");
}

double softplus_l1(const Vec& v, double beta) {
    if (!(beta > 0)) throw ConfigError("softplus_l1: beta must be positive");
    double s = 0.0;
    for (Index i = 0; i < v.size(); ++i) {
        const double a = std::abs(v(i));
        s += a + (2.0 / beta) * std::log1p(std::exp(-beta * a));
    }
    return s;
}

Vec softplus_l1_gradient(const Vec& v, double beta) {
    return (0.5 * beta * v.array()).tanh().matrix();
}

double exp_barrier(const Vec& v, const Bounds& bounds, double alpha, BarrierForm form) {
    const double a = form_scale(form) * alpha;
    double s = 0.0;
    if (bounds.upper) s += (a * (v - *bounds.upper).array()).exp().sum();
    if (bounds.lower) s += (a * (*bounds.lower - v).array()).exp().sum();
    return s;
}

Vec exp_barrier_gradient(const Vec& v, const Bounds& bounds, double alpha, BarrierForm form) {
    const double a = form_scale(form) * alpha;
    Vec g = Vec::Zero(v.size());
    if (bounds.upper) g.array() += a * (a * (v - *bounds.upper).array()).exp();
    if (bounds.lower) g.array() -= a * (a * (*bounds.lower - v).array()).exp();
    return g;
}

double exp_barrier_theta(const Vec& theta, const Bounds& bounds, double alpha, BarrierForm form) {
    return exp_barrier(theta, bounds, alpha, form);
}

double exp_barrier_state(const Vec& x, const Bounds& bounds, double alpha, BarrierForm form) {
    return exp_barrier(x, bounds, alpha, form);
}

double local_loss(const CostSpec& spec, const Vec& e, Index T, bool observed) {
    if (!observed) return 0.0;
    return spec.loss.value(e, T);
}

StepPenalty step_penalty(const CostSpec& spec, const Vec& x, const Vec& theta) {
    StepPenalty p;
    if (!spec.theta_bounds.empty()) p.inequality += exp_barrier(theta, spec.theta_bounds, spec.alpha, spec.theta_barrier);
    if (!spec.state_bounds.empty()) p.inequality += exp_barrier(x, spec.state_bounds, spec.alpha, spec.state_barrier);
    if (spec.equality) p.equality = spec.equality->q(x, theta).squaredNorm();
    return p;
}

CostBreakdown total_cost(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                         const Dataset& data, const Vec& theta, const Vec& x0, const SimulationOptions& sim) {
    const Dimensions& d = model.dims();
    data.validate(d);
    spec.validate(d.ntheta, d.nx);
    SimulationOptions so = sim;
    so.throw_on_escape = true;
    const Trajectory tr = simulate(model, x0, theta, data.u, bb, so);
    const Index T = data.horizon();
    const double reg_step = (bb && spec.gamma > 0)
                                ? spec.gamma * softplus_l1(Eigen::Map<const Vec>(bb->omega.data(), bb->omega.size()), spec.beta)
                                : 0.0;
    CostBreakdown c;
    c.loss_per_step = Vec::Zero(T);
    c.penalty_per_step = Vec::Zero(T);
    for (Index k = 0; k < T; ++k) {
        const Vec e = tr.z.col(k) - data.z.col(k);
        c.loss_per_step(k) = local_loss(spec, e, T, data.is_observed(k));
        const StepPenalty p = step_penalty(spec, tr.x.col(k), theta);
        const double ineq = spec.lambda * p.inequality;
        const double eq = spec.nu * p.equality;
        c.loss += c.loss_per_step(k);
        c.inequality += ineq;
        c.equality += eq;
        c.regularization += reg_step;
        c.penalty_per_step(k) = ineq + eq + reg_step;
    }
    c.total = c.loss + c.inequality + c.equality + c.regularization;
    return c;
}

PenaltyGradients penalty_gradients(const CostSpec& spec, const Vec& x, const Vec& theta, const Mat* omega) {
    PenaltyGradients g;
    g.dp_dx = spec.state_bounds.empty() ? Vec::Zero(x.size())
                                        : exp_barrier_gradient(x, spec.state_bounds, spec.alpha, spec.state_barrier);
    g.dp_dtheta = spec.theta_bounds.empty()
                      ? Vec::Zero(theta.size())
                      : exp_barrier_gradient(theta, spec.theta_bounds, spec.alpha, spec.theta_barrier);
    if (spec.equality) {
        const Vec q = spec.equality->q(x, theta);
        g.dq2_dx = 2.0 * spec.equality->dq_dx(x, theta).transpose() * q;
        g.dq2_dtheta = 2.0 * spec.equality->dq_dtheta(x, theta).transpose() * q;
    } else {
        g.dq2_dx = Vec::Zero(x.size());
        g.dq2_dtheta = Vec::Zero(theta.size());
    }
    if (omega) g.dreg_domega = softplus_l1_gradient(Eigen::Map<const Vec>(omega->data(), omega->size()), spec.beta);
    return g;
}

}  // namespace greybox
