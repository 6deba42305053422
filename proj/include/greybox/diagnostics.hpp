#pragma once

#include "greybox/blackbox.hpp"
#include "greybox/common.hpp"
#include "greybox/cost.hpp"
#include "greybox/dynamics.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>

namespace greybox {

struct IdentifiabilityReport {
    Mat hessian;
    Vec eigenvalues;          ///< ascending
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    double condition = 0.0;   ///< lambda_max / lambda_min, infinite when not PD
    bool positive_definite = false;
    std::vector<Index> escaped;  ///< coordinates whose perturbation escaped
};

using GradientFn = std::function<Vec(const Vec&)>;

/// Central differences of an exact gradient, step 1e-4 * max(1, |p_i|), symmetrized.
IdentifiabilityReport hessian_from_gradient(const GradientFn& grad, const Vec& point, double rel_step = 1e-4);

/// Hessian of the cost over [vartheta; x0] (or vartheta only) at a candidate optimum.
IdentifiabilityReport hessian_estimate(const ParametricModel& model, const BlackBox* bb, const CostSpec& spec,
                                       const Dataset& data, const Vec& theta, const Vec& x0,
                                       bool include_x0 = true, double rel_step = 1e-4);

enum class NoiseDistribution { uniform, gaussian_truncated };

struct NoiseModel {
    NoiseDistribution distribution = NoiseDistribution::uniform;
    double input_scale = 0.0;   ///< bound (uniform) or sigma (truncated at 3 sigma)
    double output_scale = 0.0;
    unsigned long long seed = 1;

    double input_bound() const;   ///< per-entry bound
    double output_bound() const;
    double draw(double scale, std::mt19937_64& rng) const;
};

struct ErrorBoundEstimate {
    double M_u = 0.0;
    double M_z = 0.0;
    double eta_u = 0.0;       ///< sequence-norm bound of the input noise
    double eta_z = 0.0;
    double delta_bar = 0.0;
    double bound = 0.0;       ///< M_u eta_u + M_z eta_z (M_Delta not estimated)
    std::string m_delta = "not estimated";
    std::size_t samples = 0;
    std::vector<double> sample_M_u;
    std::vector<double> sample_M_z;
};

/// Noisy dataset for the given realization seed.
using DatasetGenerator = std::function<Dataset(std::mt19937_64& rng)>;
/// Re-identification returning theta* for a dataset.
using ThetaSolver = std::function<Vec(const Dataset&)>;

/// Samples noise, re-identifies, and takes the largest ||[H^-1 G]_u||_2 and ||[H^-1 G]_z||_2
/// over samples. G is the finite-difference sensitivity of the theta-gradient to every
/// input and output entry. Throws NotIdentifiableError when H is not positive definite.
ErrorBoundEstimate error_bound_mc(const ParametricModel& model, const CostSpec& spec,
                                  const DatasetGenerator& generate, const ThetaSolver& solve,
                                  const Vec& x0, const NoiseModel& noise, std::size_t samples,
                                  double delta_bar = 0.0);

/// Newton iterations on the theta-gradient with a finite-difference Hessian; x0 fixed.
Vec newton_identify(const ParametricModel& model, const CostSpec& spec, const Dataset& data,
                    const Vec& theta0, const Vec& x0, int iterations = 5);

}  // namespace greybox
