#include "greybox/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace greybox {

std::string to_string(UpdateRule rule) {
    switch (rule) {
        case UpdateRule::plain: return "plain";
        case UpdateRule::momentum: return "momentum";
        case UpdateRule::adaptive: return "adaptive";
        case UpdateRule::adam: return "adam";
    }
    return "unknown";
}

UpdateRule update_rule_from_string(const std::string& s) {
    if (s == "plain") return UpdateRule::plain;
    if (s == "momentum") return UpdateRule::momentum;
    if (s == "adaptive") return UpdateRule::adaptive;
    if (s == "adam") return UpdateRule::adam;
    throw ConfigError("unknown update rule: " + s);
}

std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::CostThreshold: return "CostThreshold";
        case StopReason::GradThreshold: return "GradThreshold";
        case StopReason::MaxIters: return "MaxIters";
    }
    return "unknown";
}

void OptimizerConfig::validate() const {
    if (!(lr_theta > 0) || !(lr_x0 > 0) || (lr_weights && !(*lr_weights > 0)))
        throw ConfigError("optimizer: learning rates must be positive");
    if (eps_cost < 0 || eps_grad < 0) throw ConfigError("optimizer: thresholds must be non-negative");
    if (max_iterations < 1) throw ConfigError("optimizer: max_iterations must be at least 1");
    if (!(backoff > 0 && backoff < 1)) throw ConfigError("optimizer: backoff must lie in (0, 1)");
    if (max_backoffs < 0) throw ConfigError("optimizer: max_backoffs must be non-negative");
    if (momentum < 0 || momentum >= 1) throw ConfigError("optimizer: momentum must lie in [0, 1)");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("optimizer: adam betas must lie in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("optimizer: epsilon must be positive");
    if (threshold < 0) throw ConfigError("optimizer: threshold must be non-negative");
    if (!(innovation_budget > 0) || !(state_bound > 0)) throw ConfigError("optimizer: monitor limits must be positive");
}

Vec update(const Vec& params, const Vec& grad, const Vec& rates, const OptimizerConfig& cfg, UpdateMemory& mem) {
    if (grad.size() != params.size() || rates.size() != params.size())
        throw ConfigError("update: gradient dimension mismatch");
    const Index n = params.size();
    if (mem.m.size() != n) mem.m = Vec::Zero(n);
    if (mem.v.size() != n) mem.v = Vec::Zero(n);
    ++mem.t;
    switch (cfg.rule) {
        case UpdateRule::plain:
            return params - rates.cwiseProduct(grad);
        case UpdateRule::momentum:
            mem.m = cfg.momentum * mem.m + grad;
            return params - rates.cwiseProduct(mem.m);
        case UpdateRule::adaptive: {
            mem.v += grad.cwiseAbs2();
            const Vec denom = mem.v.cwiseSqrt().array() + cfg.epsilon;
            return params - rates.cwiseProduct(grad.cwiseQuotient(denom));
        }
        case UpdateRule::adam: {
            mem.m = cfg.beta1 * mem.m + (1.0 - cfg.beta1) * grad;
            mem.v = cfg.beta2 * mem.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mem.t));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mem.t));
            const Vec denom = (mem.v / c2).cwiseSqrt().array() + cfg.epsilon;
            return params - rates.cwiseProduct((mem.m / c1).cwiseQuotient(denom));
        }
    }
    return params;
}

Vec project(const Vec& theta, const Bounds& box) {
    Vec out = theta;
    if (box.lower) {
        if (box.lower->size() != theta.size()) throw ConfigError("project: bound size mismatch");
        out = out.cwiseMax(*box.lower);
    }
    if (box.upper) {
        if (box.upper->size() != theta.size()) throw ConfigError("project: bound size mismatch");
        out = out.cwiseMin(*box.upper);
    }
    return out;
}

IdentResult identify(const ParametricModel& model, const CostSpec& spec, const Dataset& data,
                     const IdentInit& init, const OptimizerConfig& cfg) {
    cfg.validate();
    const Dimensions& d = model.dims();
    spec.validate(d.ntheta, d.nx);
    data.validate(d);
    if (init.theta.size() != d.ntheta || init.x0.size() != d.nx) throw ConfigError("identify: init dimensions mismatch");
    if (!init.theta.allFinite() || !init.x0.allFinite()) throw ConfigError("identify: init must be finite");

    std::optional<BlackBox> bb = init.bb;
    BlackBox* bbp = bb ? &*bb : nullptr;
    const Index ntheta = d.ntheta;
    const Index nv = n_vartheta(model, bbp);
    const Index np = nv + d.nx;

    Vec rates(np);
    rates.head(ntheta).setConstant(cfg.lr_theta);
    rates.segment(ntheta, nv - ntheta).setConstant(cfg.lr_weights.value_or(cfg.lr_theta));
    rates.tail(d.nx).setConstant(cfg.estimate_x0 ? cfg.lr_x0 : 0.0);

    GradientOptions gopt;
    gopt.sim.state_bound = cfg.state_bound;
    auto evaluate = [&](const Vec& p) {
        const Vec th = unpack_vartheta(p.head(nv), ntheta, bbp);
        return full_gradient(model, bbp, spec, data, th, p.tail(d.nx), gopt);
    };
    auto stacked_grad = [&](const FullGradient& g) {
        Vec out(np);
        out << g.grad, (cfg.estimate_x0 ? g.grad_x0 : Vec::Zero(d.nx));
        return out;
    };

    Vec p(np);
    p << pack_vartheta(init.theta, bbp), init.x0;
    FullGradient g = evaluate(p);
    if (g.escape_step) throw EscapeError(*g.escape_step, "identify: initial point escapes");

    IdentResult res;
    UpdateMemory mem;
    double scale = 1.0;
    int consecutive = 0;
    Vec best_p = p;
    double best_cost = g.cost;

    struct Accepted {
        Vec p;
        FullGradient g;
        UpdateMemory mem;
    };
    std::optional<Accepted> prev;

    auto backoff = [&](long it, MonitorVerdict verdict) {
        res.events.push_back({it, verdict, true});
        ++res.backoffs;
        scale *= cfg.backoff;
        if (++consecutive > cfg.max_backoffs)
            throw EscapeAbortError(verdict.step, "identify: aborted after " + std::to_string(cfg.max_backoffs) +
                                                     " consecutive escape backoffs at iteration " + std::to_string(it));
    };

    long it = 1;
    for (;; ++it) {
        Vec gfull = stacked_grad(g);
        if (!gfull.allFinite() && prev) {
            // Overflowed gradient at an accepted point: step back and shrink.
            backoff(it, {MonitorKind::FiniteEscape, -1});
            p = prev->p;
            g = prev->g;
            mem = prev->mem;
            prev.reset();
            gfull = stacked_grad(g);
        }
        const MonitorVerdict verdict = stability_monitor(g.trace, cfg.innovation_budget, cfg.state_bound, g.escape_step);
        const double gn = gfull.norm();
        res.history.push_back({it, g.cost, gn, scale, verdict.kind});
        if (verdict.kind != MonitorKind::Stable) res.events.push_back({it, verdict, false});
        if (g.cost < best_cost) {
            best_cost = g.cost;
            best_p = p;
        }
        if (g.cost < cfg.eps_cost) {
            res.stop = StopReason::CostThreshold;
            break;
        }
        if (gn < cfg.eps_grad) {
            res.stop = StopReason::GradThreshold;
            break;
        }
        if (it >= cfg.max_iterations) {
            res.stop = StopReason::MaxIters;
            break;
        }
        const Vec gstep = gfull.allFinite() ? gfull : Vec(gfull.unaryExpr([](double v) {
            return std::isfinite(v) ? v : 0.0;
        }));
        for (;;) {
            UpdateMemory trial = mem;
            Vec pn = update(p, gstep, rates * scale, cfg, trial);
            if (cfg.project) pn.head(ntheta) = project(pn.head(ntheta), spec.theta_bounds);
            FullGradient gn_eval = evaluate(pn);
            if (!gn_eval.escape_step && std::isfinite(gn_eval.cost)) {
                prev = Accepted{p, std::move(g), mem};
                p = std::move(pn);
                g = std::move(gn_eval);
                mem = std::move(trial);
                consecutive = 0;
                break;
            }
            backoff(it, {MonitorKind::FiniteEscape, gn_eval.escape_step.value_or(-1)});
        }
    }
    res.iterations = it;
    res.converged = res.stop != StopReason::MaxIters;
    const Vec& chosen = res.converged ? p : best_p;

    res.theta = unpack_vartheta(chosen.head(nv), ntheta, bbp);
    res.x0 = chosen.tail(d.nx);
    if (bb) {
        res.omega_raw = bb->omega;
        bb->omega = hard_threshold(bb->omega, cfg.threshold);
    }
    res.bb = bb;
    const FullGradient fin = full_gradient(model, bbp, spec, data, res.theta, res.x0, gopt);
    res.breakdown = fin.breakdown;
    res.final_cost = fin.cost;
    res.clamp_events = fin.clamp_events;
    return res;
}

}  // namespace greybox
