#pragma once

#include "greybox/blackbox.hpp"
#include "greybox/common.hpp"
#include "greybox/cost.hpp"
#include "greybox/dynamics.hpp"
#include "greybox/gradsys.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace greybox {

enum class UpdateRule { plain, momentum, adaptive, adam };
std::string to_string(UpdateRule rule);
UpdateRule update_rule_from_string(const std::string& s);

struct OptimizerConfig {
    double lr_theta = 0.01;
    double lr_x0 = 0.01;
    std::optional<double> lr_weights;  ///< black-box weights; defaults to lr_theta
    double eps_cost = 1e-10;
    double eps_grad = 1e-8;
    long max_iterations = 50000;
    UpdateRule rule = UpdateRule::adaptive;
    double momentum = 0.9;
    double beta1 = 0.9;      ///< adam first moment
    double beta2 = 0.999;    ///< adam second moment
    double epsilon = 1e-8;   ///< adaptive / adam denominator guard
    double backoff = 0.5;
    int max_backoffs = 20;
    bool project = false;
    bool estimate_x0 = true;
    double threshold = 1e-4;  ///< hard threshold on Omega after the loop
    double innovation_budget = std::numeric_limits<double>::infinity();
    double state_bound = 1e6;

    void validate() const;
};

/// Per-coordinate memory carried across update() calls.
struct UpdateMemory {
    Vec m;
    Vec v;
    long t = 0;
};

/// One first-order step on the stacked vector [vartheta; x0]. rates holds the
/// per-coordinate learning rate (already scaled by any backoff).
Vec update(const Vec& params, const Vec& grad, const Vec& rates, const OptimizerConfig& cfg, UpdateMemory& mem);

/// Coordinatewise clamp; identity for absent bounds.
Vec project(const Vec& theta, const Bounds& box);

enum class StopReason { CostThreshold, GradThreshold, MaxIters };
std::string to_string(StopReason r);

struct MonitorEvent {
    long iteration = 0;
    MonitorVerdict verdict;
    bool backoff = false;  ///< step was rejected and the rate reduced
};

struct HistoryEntry {
    long iteration = 0;
    double cost = 0.0;
    double grad_norm = 0.0;
    double rate_scale = 1.0;
    MonitorKind verdict = MonitorKind::Stable;
};

struct IdentInit {
    Vec theta;
    Vec x0;
    std::optional<BlackBox> bb;
};

struct IdentResult {
    Vec theta;
    Vec x0;
    std::optional<BlackBox> bb;  ///< Omega already hard-thresholded
    Mat omega_raw;               ///< Omega before thresholding
    CostBreakdown breakdown;     ///< at the returned (thresholded) parameters
    double final_cost = 0.0;
    long iterations = 0;
    StopReason stop = StopReason::MaxIters;
    bool converged = false;
    std::vector<HistoryEntry> history;
    std::vector<MonitorEvent> events;
    long backoffs = 0;
    Index clamp_events = 0;
};

IdentResult identify(const ParametricModel& model, const CostSpec& spec, const Dataset& data,
                     const IdentInit& init, const OptimizerConfig& cfg);

}  // namespace greybox
