#pragma once

#include "greybox/common.hpp"
#include "greybox/cost.hpp"
#include "greybox/dynamics.hpp"

#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace greybox {

class BlackBox;

/// Parameter vector ordering is [theta; vec(Omega); vec(W); vec(B)].
Index n_vartheta(const ParametricModel& model, const BlackBox* bb);
Vec pack_vartheta(const Vec& theta, const BlackBox* bb);
/// Splits vartheta into theta and (if bb is given) the black-box weights written into *bb.
Vec unpack_vartheta(const Vec& vartheta, Index ntheta, BlackBox* bb);

struct GradientState {
    Mat lambda;    ///< nx x n_vartheta, d x_k / d vartheta
    Mat lambda0;   ///< nx x nx, d x_k / d x0
    Vec grad;      ///< accumulated gradient over vartheta
    Vec grad_x0;
    long k = -1;   ///< last step folded in; -1 before the first call

    static GradientState initial(Index nx, Index nvartheta);
};

/// rho/varrho at step k and the Jacobians of the transition k-1 -> k.
struct StepSensitivities {
    Vec rho;      ///< nx
    Vec varrho;   ///< n_vartheta
    Mat jxx;      ///< nx x nx  (ignored on the first step)
    Mat jxv;      ///< nx x n_vartheta (ignored on the first step)
    Mat jzx;      ///< nz x nx at step k
};

/// Builds rho_k and varrho_k at (x_k, e_k). Jacobians of the transition out of x_k
/// are returned in jxx/jxv so the caller can feed them into the next propagate call.
StepSensitivities step_sensitivities(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                                     const Vec& x, const Vec& u, const Vec& e, const Vec& theta, Index T,
                                     bool observed, bool with_transition = true);

/// Returns the innovation Lambda_k^T rho_k + varrho_k folded into the state.
Vec propagate(GradientState& state, const StepSensitivities& sens);

struct GradientTrace {
    std::vector<double> innovation_norm;
    std::vector<double> state_norm;
    std::vector<double> cum_sum;
    Mat innovations;  ///< n_vartheta x T, filled only when requested
};

struct GradientOptions {
    SimulationOptions sim;
    bool keep_innovations = false;
};

struct FullGradient {
    Vec grad;      ///< over vartheta
    Vec grad_x0;
    double cost = 0.0;
    CostBreakdown breakdown;
    GradientTrace trace;
    std::optional<long> escape_step;  ///< set when the forward pass escaped; grad is partial
    Index clamp_events = 0;
};

FullGradient full_gradient(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                           const Dataset& data, const Vec& theta, const Vec& x0,
                           const GradientOptions& opts = {});

struct FiniteDifferenceGradient {
    Vec grad;     ///< over vartheta
    Vec grad_x0;
    std::vector<Index> escaped;  ///< coordinates (vartheta first, then x0) with escaped perturbations
};

/// Fourth-order central differences of total_cost with step h * max(1, |v|).
FiniteDifferenceGradient finite_difference_gradient(const ParametricModel& model, const BlackBox* bb,
                                                    const CostSpec& spec, const Dataset& data,
                                                    const Vec& theta, const Vec& x0, double h = 1e-6,
                                                    const SimulationOptions& sim = {});

/// Exact gradient against central differences over [vartheta; x0]. The relative error of
/// coordinate i is |g_i - fd_i| / max(|fd_i|, floor * ||fd||_inf).
struct GradientCheck {
    Vec exact;
    Vec fd;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    Index worst = -1;
    std::vector<Index> escaped;
};
GradientCheck check_gradient(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                             const Dataset& data, const Vec& theta, const Vec& x0, double h = 1e-6,
                             double floor = 1e-3);

enum class MonitorKind { Stable, InnovationBudgetExceeded, FiniteEscape };
std::string to_string(MonitorKind kind);

struct MonitorVerdict {
    MonitorKind kind = MonitorKind::Stable;
    long step = -1;
};

MonitorVerdict stability_monitor(const GradientTrace& trace, double budget,
                                 double state_bound = 1e6,
                                 std::optional<long> escape_step = std::nullopt);

void write_trace_csv(std::ostream& out, const GradientTrace& trace);

}  // namespace greybox
