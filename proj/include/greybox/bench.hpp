#pragma once

#include "greybox/blackbox.hpp"
#include "greybox/common.hpp"
#include "greybox/cost.hpp"
#include "greybox/diagnostics.hpp"
#include "greybox/dynamics.hpp"
#include "greybox/optimizer.hpp"
#include "greybox/sparsity.hpp"

#include <optional>
#include <string>
#include <vector>

namespace greybox {

/// Logistic map from x0 with additive output noise; z = x.
Dataset gen_logistic(double theta, double x0, Index T, const NoiseModel& noise = {});

struct OverflowModel {
    bool enabled = true;
    double x_max = 10.0;           ///< upper-tank level where water spills
    double routed_fraction = 0.5;  ///< share of the spill that reaches the lower tank
};

struct TanksTruth {
    Vec k = (Vec(4) << 0.0764, 0.0268, 0.0415, 0.0386).finished();
    Vec x0 = (Vec(2) << 5.0, 3.0).finished();
    double Ts = 4.0;
    int substeps = 10;
    OverflowModel overflow;
};

/// Sub-stepped Euler truth with upper-tank overflow; z = x2 + noise, u~ = u + noise.
Dataset gen_tanks(const TanksTruth& truth, const Mat& u, const NoiseModel& noise = {}, Mat* states = nullptr);

struct InputSignal {
    double offset = 4.5;
    double multisine_amplitude = 1.5;
    int harmonics = 6;
    double max_frequency = 0.02;   ///< cycles per sample
    double step_amplitude = 2.0;
    Index step_length = 128;
    double lower = 0.0;
    double upper = 10.0;
};

/// Multisine plus random steps, clipped to [lower, upper]; 1 x T.
Mat multisine_steps(Index T, const InputSignal& sig, unsigned long long seed);

/// Two-column `u,z` file as distributed with the cascaded tanks benchmark (header optional).
Dataset read_cts_csv(const std::string& path, double Ts = 4.0);
void write_cts_csv(const std::string& path, const Dataset& data);

double rmse(const Mat& z, const Mat& zhat);
double rmse(const Vec& z, const Vec& zhat);

struct LogisticExperiment {
    double theta_true = 3.5;
    double x0 = 0.4;
    Index horizon = 200;
    double theta_init = 3.9;
    NoiseModel noise;
    CostSpec cost;             ///< with the state barrier
    OptimizerConfig optimizer;
    bool compare_without_barrier = true;

    static LogisticExperiment defaults();
};

struct LogisticReport {
    LogisticExperiment config;
    Dataset data;
    IdentResult barrier;
    std::optional<IdentResult> no_barrier;
    std::string no_barrier_abort;   ///< message when the unconstrained run aborted
    bool no_barrier_flagged = false;
    double theta_error = 0.0;
};

LogisticReport run_logistic(const LogisticExperiment& cfg);

struct TanksExperiment {
    TanksTruth truth;
    Index horizon = 1024;
    InputSignal input;
    NoiseModel noise;
    unsigned long long train_seed = 11;
    unsigned long long validation_seed = 12;
    CostSpec cost;
    OptimizerConfig physics_optimizer;
    OptimizerConfig augmented_optimizer;
    std::vector<std::string> dictionary;
    double w_init_scale = 1.0;
    Vec k_init = Vec::Constant(4, 0.05);
    bool augmented = true;
    bool certify = true;
    double certify_mu_scale = 1.05;  ///< mu = scale * residual of the identified model on the linearized split
    std::string train_csv;           ///< measured data instead of the synthetic truth when both are set
    std::string validation_csv;

    static TanksExperiment defaults();
};

struct TanksReport {
    TanksExperiment config;
    Dataset train;
    Dataset validation;
    IdentResult physics;
    std::optional<IdentResult> augmented;
    double rmse_train_physics = 0.0;
    double rmse_validation_physics = 0.0;
    double rmse_train_augmented = 0.0;
    double rmse_validation_augmented = 0.0;
    bool measured = false;  ///< data came from train_csv / validation_csv
    Vec k_relative_error;  ///< of the augmented estimate (physics-only when not augmented); empty for measured data
    std::optional<CertificationRun> certification;
    std::string certification_note;
};

TanksReport run_tanks(const TanksExperiment& cfg);

/// Reference values quoted for context in reports (real benchmark data, not reproduced here).
struct TanksReference {
    double physics_train = 0.601;
    double physics_validation = 0.668;
    double augmented_train = 0.134;
    double augmented_validation = 0.259;
};

}  // namespace greybox
