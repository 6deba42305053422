#include "greybox/gradsys.hpp"

#include "greybox/blackbox.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace greybox {

Index n_vartheta(const ParametricModel& model, const BlackBox* bb) {
    return model.dims().ntheta + (bb ? bb->n_weights() : 0);
}

Vec pack_vartheta(const Vec& theta, const BlackBox* bb) {
    if (!bb) return theta;
    Vec v(theta.size() + bb->n_weights());
    v << theta, bb->pack();
    return v;
}

Vec unpack_vartheta(const Vec& vartheta, Index ntheta, BlackBox* bb) {
    const Index nw = bb ? bb->n_weights() : 0;
    if (vartheta.size() != ntheta + nw) throw ConfigError("parameter vector has wrong length");
    if (bb) bb->unpack(vartheta.tail(nw));
    return vartheta.head(ntheta);
}

GradientState GradientState::initial(Index nx, Index nvartheta) {
    GradientState s;
    s.lambda = Mat::Zero(nx, nvartheta);
    s.lambda0 = Mat::Identity(nx, nx);
    s.grad = Vec::Zero(nvartheta);
    s.grad_x0 = Vec::Zero(nx);
    s.k = -1;
    return s;
}

StepSensitivities step_sensitivities(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                                     const Vec& x, const Vec& u, const Vec& e, const Vec& theta, Index T,
                                     bool observed, bool with_transition) {
    const Dimensions& d = model.dims();
    const Index nv = n_vartheta(model, bb);
    const ModelJacobians J = model.jacobians(x, u, theta);
    const PenaltyGradients pg = penalty_gradients(spec, x, theta, bb ? &bb->omega : nullptr);

    StepSensitivities s;
    s.jzx = J.hx;
    s.rho = spec.lambda * pg.dp_dx + spec.nu * pg.dq2_dx;
    if (observed) s.rho += J.hx.transpose() * spec.loss.gradient(e, T);
    s.varrho = Vec::Zero(nv);
    s.varrho.head(d.ntheta) = spec.lambda * pg.dp_dtheta + spec.nu * pg.dq2_dtheta;
    if (bb && spec.gamma > 0) s.varrho.segment(d.ntheta, bb->n_omega()) = spec.gamma * pg.dreg_domega;

    if (with_transition) {
        s.jxx = J.fx;
        s.jxv.resize(d.nx, nv);
        s.jxv.leftCols(d.ntheta) = J.ftheta;
        if (bb) {
            const DeltaJacobians dj = delta_jacobians(*bb, x, u);
            s.jxx += dj.dx;
            s.jxv.rightCols(bb->n_weights()) = dj.dw;
        }
    }
    return s;
}

Vec propagate(GradientState& state, const StepSensitivities& sens) {
    if (state.k >= 0) {
        state.lambda = sens.jxx * state.lambda + sens.jxv;
        state.lambda0 = sens.jxx * state.lambda0;
    }
    Vec innovation = state.lambda.transpose() * sens.rho + sens.varrho;
    state.grad += innovation;
    state.grad_x0 += state.lambda0.transpose() * sens.rho;
    ++state.k;
    return innovation;
}

FullGradient full_gradient(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                           const Dataset& data, const Vec& theta, const Vec& x0, const GradientOptions& opts) {
    const Dimensions& d = model.dims();
    data.validate(d);
    spec.validate(d.ntheta, d.nx);
    if (x0.size() != d.nx) throw ConfigError("full_gradient: x0 dimension mismatch");
    if (bb && (bb->nx() != d.nx || bb->nu() != d.nu))
        throw ConfigError("full_gradient: black-box dimensions do not match the model");
    const Index T = data.horizon();
    const Index nv = n_vartheta(model, bb);

    FullGradient out;
    GradientState st = GradientState::initial(d.nx, nv);
    out.trace.innovation_norm.reserve(static_cast<std::size_t>(T));
    out.trace.state_norm.reserve(static_cast<std::size_t>(T));
    out.trace.cum_sum.reserve(static_cast<std::size_t>(T));
    if (opts.keep_innovations) out.trace.innovations = Mat::Zero(nv, T);
    out.breakdown.loss_per_step = Vec::Zero(T);
    out.breakdown.penalty_per_step = Vec::Zero(T);

    const double reg_step = (bb && spec.gamma > 0)
                                ? spec.gamma * softplus_l1(Eigen::Map<const Vec>(bb->omega.data(), bb->omega.size()), spec.beta)
                                : 0.0;
    Vec x = x0;
    Mat prev_jxx, prev_jxv;
    double cum = 0.0;
    for (Index k = 0; k < T; ++k) {
        const double xn = x.norm();
        if (!x.allFinite() || xn > opts.sim.state_bound) {
            out.escape_step = static_cast<long>(k);
            break;
        }
        const bool last = (k + 1 == T);
        const Vec u = data.u.col(k);
        StepSensitivities s;
        Vec e;
        try {
            const Vec z = model.observe(x);
            e = z - data.z.col(k);
            s = step_sensitivities(model, bb, spec, x, u, e, theta, T, data.is_observed(k), !last);
        } catch (const EscapeError&) {
            out.escape_step = static_cast<long>(k);
            break;
        }
        Mat out_jxx = std::move(s.jxx), out_jxv = std::move(s.jxv);
        s.jxx = std::move(prev_jxx);
        s.jxv = std::move(prev_jxv);
        const Vec innov = propagate(st, s);
        const double in = innov.norm();
        cum += in;
        out.trace.innovation_norm.push_back(in);
        out.trace.state_norm.push_back(xn);
        out.trace.cum_sum.push_back(cum);
        if (opts.keep_innovations) out.trace.innovations.col(k) = innov;

        const double lk = local_loss(spec, e, T, data.is_observed(k));
        const StepPenalty p = step_penalty(spec, x, theta);
        out.breakdown.loss_per_step(k) = lk;
        out.breakdown.penalty_per_step(k) = spec.lambda * p.inequality + spec.nu * p.equality + reg_step;
        out.breakdown.loss += lk;
        out.breakdown.inequality += spec.lambda * p.inequality;
        out.breakdown.equality += spec.nu * p.equality;
        out.breakdown.regularization += reg_step;
        if (bb) out.clamp_events += clamp_count(*bb, x, u);

        if (last) break;
        prev_jxx = std::move(out_jxx);
        prev_jxv = std::move(out_jxv);
        try {
            Vec next = model.step(x, u, theta);
            if (bb) next += eval_delta(*bb, x, u);
            x = std::move(next);
        } catch (const EscapeError&) {
            x = Vec::Constant(d.nx, std::numeric_limits<double>::infinity());
        }
    }
    out.breakdown.total = out.breakdown.loss + out.breakdown.inequality + out.breakdown.equality +
                          out.breakdown.regularization;
    out.cost = out.escape_step ? std::numeric_limits<double>::infinity() : out.breakdown.total;
    out.grad = std::move(st.grad);
    out.grad_x0 = std::move(st.grad_x0);
    return out;
}

FiniteDifferenceGradient finite_difference_gradient(const ParametricModel& model, const BlackBox* bb,
                                                    const CostSpec& spec, const Dataset& data,
                                                    const Vec& theta, const Vec& x0, double h,
                                                    const SimulationOptions& sim) {
    if (!(h > 0)) throw ConfigError("finite_difference_gradient: step must be positive");
    const Index ntheta = model.dims().ntheta;
    const Vec v0 = pack_vartheta(theta, bb);
    BlackBox work = bb ? *bb : BlackBox();
    BlackBox* wp = bb ? &work : nullptr;
    FiniteDifferenceGradient out;
    out.grad = Vec::Zero(v0.size());
    out.grad_x0 = Vec::Zero(x0.size());

    auto eval = [&](const Vec& v, const Vec& xx) {
        const Vec th = unpack_vartheta(v, ntheta, wp);
        return total_cost(model, wp, spec, data, th, xx, sim).total;
    };
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const Index nv = v0.size();
    // Fourth-order stencil (8 [f(+s) - f(-s)] - [f(+2s) - f(-2s)]) / 12s.
    for (Index i = 0; i < nv + x0.size(); ++i) {
        const bool in_v = i < nv;
        const Index j = in_v ? i : i - nv;
        const double base = in_v ? v0(j) : x0(j);
        const double step = h * std::max(1.0, std::abs(base));
        auto at = [&](double mult) {
            Vec v = v0, xx = x0;
            (in_v ? v(j) : xx(j)) = base + mult * step;
            return eval(v, xx);
        };
        double g;
        try {
            g = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * step);
        } catch (const EscapeError&) {
            out.escaped.push_back(i);
            g = nan;
        }
        if (i < nv)
            out.grad(i) = g;
        else
            out.grad_x0(i - nv) = g;
    }
    return out;
}

GradientCheck check_gradient(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                             const Dataset& data, const Vec& theta, const Vec& x0, double h, double floor) {
    const FullGradient g = full_gradient(model, bb, spec, data, theta, x0);
    if (g.escape_step) throw EscapeError(*g.escape_step, "check_gradient: trajectory escaped");
    const FiniteDifferenceGradient fd = finite_difference_gradient(model, bb, spec, data, theta, x0, h);
    GradientCheck c;
    c.exact.resize(g.grad.size() + g.grad_x0.size());
    c.exact << g.grad, g.grad_x0;
    c.fd.resize(c.exact.size());
    c.fd << fd.grad, fd.grad_x0;
    c.escaped = fd.escaped;
    double scale = 0.0;
    for (Index i = 0; i < c.fd.size(); ++i)
        if (std::isfinite(c.fd(i))) scale = std::max(scale, std::abs(c.fd(i)));
    const double denom_floor = std::max(floor * scale, 1e-300);
    for (Index i = 0; i < c.fd.size(); ++i) {
        if (!std::isfinite(c.fd(i))) continue;
        const double abs_err = std::abs(c.exact(i) - c.fd(i));
        const double rel = abs_err / std::max(std::abs(c.fd(i)), denom_floor);
        c.max_abs_error = std::max(c.max_abs_error, abs_err);
        if (rel > c.max_rel_error || c.worst < 0) {
            c.max_rel_error = std::max(c.max_rel_error, rel);
            c.worst = i;
        }
    }
    return c;
}

std::string to_string(MonitorKind kind) {
    switch (kind) {
        case MonitorKind::Stable: return "Stable";
        case MonitorKind::InnovationBudgetExceeded: return "InnovationBudgetExceeded";
        case MonitorKind::FiniteEscape: return "FiniteEscape";
    }
    return "Unknown";
}

MonitorVerdict stability_monitor(const GradientTrace& trace, double budget, double state_bound,
                                 std::optional<long> escape_step) {
    if (!(budget > 0) || !(state_bound > 0)) throw ConfigError("stability_monitor: budget and bound must be positive");
    const std::size_t n = trace.cum_sum.size();
    for (std::size_t k = 0; k < n; ++k) {
        const double xn = trace.state_norm[k];
        if (!std::isfinite(xn) || xn > state_bound) return {MonitorKind::FiniteEscape, static_cast<long>(k)};
        const double c = trace.cum_sum[k];
        if (!std::isfinite(c) || c > budget) return {MonitorKind::InnovationBudgetExceeded, static_cast<long>(k)};
    }
    if (escape_step) return {MonitorKind::FiniteEscape, *escape_step};
    return {};
}

void write_trace_csv(std::ostream& out, const GradientTrace& trace) {
    out << "k,innovation_norm,state_norm,cum_sum\n" << std::setprecision(17);
    for (std::size_t k = 0; k < trace.cum_sum.size(); ++k)
        out << k << "," << trace.innovation_norm[k] << "," << trace.state_norm[k] << "," << trace.cum_sum[k] << "\n";
}

}  // namespace greybox
