#pragma once

#include "greybox/bench.hpp"
#include "greybox/cost.hpp"
#include "greybox/diagnostics.hpp"
#include "greybox/io.hpp"
#include "greybox/optimizer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace greybox {

/// Which built-in physical model the identify / gradcheck / certify / diagnose commands use.
struct ModelConfig {
    std::string name = "tanks";  ///< logistic | tanks | linear
    double Ts = 4.0;
    Index nx = 1;                ///< linear only
    Index nu = 1;                ///< linear only
    Mat C;                       ///< linear only; identity when empty
};

struct BlackBoxConfig {
    bool enabled = true;
    std::vector<std::string> dictionary = default_dictionary().names();
    double w_init_scale = 0.1;
};

struct CertifyConfig {
    std::string run;              ///< IdentResult JSON to certify; identify first when empty
    std::optional<double> mu;     ///< absolute noise bound on the linearized split
    double mu_scale = 1.05;       ///< otherwise mu = scale * residual at the estimate
};

struct DiagnoseConfig {
    std::string run;
    bool include_x0 = true;
    std::size_t error_bound_samples = 0;  ///< 0 skips the Monte Carlo bound
    NoiseModel noise;
    int newton_iterations = 5;
};

struct GradcheckConfig {
    double h = 1e-6;
    Index horizon = 64;
    double tolerance = 1e-5;
};

/// Everything a command may need; every field has a default and is echoed into reports.
struct RunConfig {
    std::string experiment = "logistic";  ///< gen-data default
    ModelConfig model;
    CostSpec cost;
    OptimizerConfig optimizer;
    BlackBoxConfig blackbox;
    std::optional<Vec> theta0;
    std::optional<Vec> x0;
    LogisticExperiment logistic = LogisticExperiment::defaults();
    TanksExperiment tanks = TanksExperiment::defaults();
    CertifyConfig certify;
    DiagnoseConfig diagnose;
    GradcheckConfig gradcheck;
    unsigned long long seed = 1;
};

RunConfig default_run_config();
/// Overlays j on the defaults; unknown keys are a ConfigError.
RunConfig parse_run_config(const json& j);
RunConfig load_run_config(const std::string& path);
json to_json(const RunConfig& cfg);

json to_json(const CostSpec& c);
json to_json(const OptimizerConfig& c);
json to_json(const NoiseModel& n);
void apply_json(const json& j, CostSpec& c, const std::string& where);
void apply_json(const json& j, OptimizerConfig& c, const std::string& where);
void apply_json(const json& j, NoiseModel& n, const std::string& where);

/// Model and default initial point for a ModelConfig.
ParametricModel build_model(const ModelConfig& m);
Vec default_theta0(const ModelConfig& m);

}  // namespace greybox
