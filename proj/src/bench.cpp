#include "greybox/bench.hpp"

#include "greybox/gradsys.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <limits>
#include <numbers>
#include <random>

namespace greybox {

Dataset gen_logistic(double theta, double x0, Index T, const NoiseModel& noise) {
    if (T < 1) throw ConfigError("gen_logistic: horizon must be positive");
    std::mt19937_64 rng(noise.seed);
    Dataset d;
    d.u = Mat::Zero(0, T);
    d.z.resize(1, T);
    double x = x0;
    for (Index k = 0; k < T; ++k) {
        if (!std::isfinite(x)) throw EscapeError(static_cast<long>(k), "gen_logistic: state escaped");
        d.z(0, k) = x + noise.draw(noise.output_scale, rng);
        x = theta * x * (1.0 - x);
    }
    return d;
}

Dataset gen_tanks(const TanksTruth& truth, const Mat& u, const NoiseModel& noise, Mat* states) {
    if (u.rows() != 1 || u.cols() < 1) throw ConfigError("gen_tanks: input must be 1 x T");
    if (truth.k.size() != 4 || truth.x0.size() != 2) throw ConfigError("gen_tanks: truth dimensions");
    if (truth.substeps < 1 || !(truth.Ts > 0)) throw ConfigError("gen_tanks: bad sampling settings");
    const Index T = u.cols();
    const double h = truth.Ts / truth.substeps;
    const Vec& k = truth.k;
    std::mt19937_64 rng(noise.seed);

    Dataset d;
    d.Ts = truth.Ts;
    d.u.resize(1, T);
    d.z.resize(1, T);
    if (states) states->resize(2, T);
    double x1 = truth.x0(0), x2 = truth.x0(1);
    for (Index t = 0; t < T; ++t) {
        if (states) {
            (*states)(0, t) = x1;
            (*states)(1, t) = x2;
        }
        d.u(0, t) = u(0, t) + noise.draw(noise.input_scale, rng);
        d.z(0, t) = x2 + noise.draw(noise.output_scale, rng);
        for (int s = 0; s < truth.substeps; ++s) {
            const double q1 = std::sqrt(std::max(x1, 0.0));
            const double q2 = std::sqrt(std::max(x2, 0.0));
            x1 += h * (-k(0) * q1 + k(3) * u(0, t));
            x2 += h * (k(1) * q1 - k(2) * q2);
            if (truth.overflow.enabled && x1 > truth.overflow.x_max) {
                x2 += truth.overflow.routed_fraction * (x1 - truth.overflow.x_max);
                x1 = truth.overflow.x_max;
            }
        }
    }
    return d;
}

Mat multisine_steps(Index T, const InputSignal& sig, unsigned long long seed) {
    if (T < 1 || sig.harmonics < 0 || sig.step_length < 1) throw ConfigError("multisine_steps: bad settings");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> level(-sig.step_amplitude, sig.step_amplitude);
    std::vector<double> phases(static_cast<std::size_t>(sig.harmonics));
    for (double& p : phases) p = phase(rng);
    const double a = sig.harmonics > 0 ? sig.multisine_amplitude / std::sqrt(static_cast<double>(sig.harmonics)) : 0.0;
    Mat u(1, T);
    double step = 0.0;
    for (Index k = 0; k < T; ++k) {
        if (k % sig.step_length == 0) step = level(rng);
        double v = sig.offset + step;
        for (int i = 0; i < sig.harmonics; ++i) {
            const double f = sig.max_frequency * (i + 1) / sig.harmonics;
            v += a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(k) + phases[static_cast<std::size_t>(i)]);
        }
        u(0, k) = std::clamp(v, sig.lower, sig.upper);
    }
    return u;
}

Dataset read_cts_csv(const std::string& path, double Ts) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::vector<double> u, z;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ';', ',');
        std::istringstream ss(line);
        std::string a, b;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ','))
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected two columns u,z");
        try {
            const double va = std::stod(a), vb = std::stod(b);
            u.push_back(va);
            z.push_back(vb);
        } catch (const std::exception&) {
            if (lineno == 1) continue;
            throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number");
        }
    }
    if (u.empty()) throw ConfigError(path + ": no samples");
    Dataset d;
    d.Ts = Ts;
    d.u = Eigen::Map<const Mat>(u.data(), 1, static_cast<Index>(u.size()));
    d.z = Eigen::Map<const Mat>(z.data(), 1, static_cast<Index>(z.size()));
    return d;
}

void write_cts_csv(const std::string& path, const Dataset& data) {
    if (data.u.rows() != 1 || data.z.rows() != 1) throw ConfigError("write_cts_csv: needs one input and one output");
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "u,z\n" << std::setprecision(17);
    for (Index k = 0; k < data.horizon(); ++k) out << data.u(0, k) << "," << data.z(0, k) << "\n";
}

double rmse(const Mat& z, const Mat& zhat) {
    if (z.rows() != zhat.rows() || z.cols() != zhat.cols() || z.size() == 0) throw ConfigError("rmse: shape mismatch");
    return std::sqrt((z - zhat).squaredNorm() / static_cast<double>(z.size()));
}

double rmse(const Vec& z, const Vec& zhat) { return rmse(Mat(z), Mat(zhat)); }

LogisticExperiment LogisticExperiment::defaults() {
    LogisticExperiment e;
    e.cost.lambda = 0.01;
    e.cost.alpha = 75.0;
    e.cost.state_bounds.lower = Vec::Zero(1);
    e.cost.state_bounds.upper = Vec::Ones(1);
    e.cost.state_barrier = BarrierForm::plain_sum;
    e.optimizer.rule = UpdateRule::adam;
    e.optimizer.lr_theta = 0.02;
    e.optimizer.beta1 = 0.9;
    e.optimizer.beta2 = 0.9;
    e.optimizer.max_iterations = 6000;
    e.optimizer.estimate_x0 = false;
    e.optimizer.eps_cost = 0.0;
    e.optimizer.eps_grad = 1e-10;
    e.optimizer.innovation_budget = 1e6;
    return e;
}

LogisticReport run_logistic(const LogisticExperiment& cfg) {
    LogisticReport rep;
    rep.config = cfg;
    rep.data = gen_logistic(cfg.theta_true, cfg.x0, cfg.horizon, cfg.noise);
    const ParametricModel model = logistic_map();
    IdentInit init;
    init.theta = Vec::Constant(1, cfg.theta_init);
    init.x0 = Vec::Constant(1, cfg.x0);
    rep.barrier = identify(model, cfg.cost, rep.data, init, cfg.optimizer);
    rep.theta_error = std::abs(rep.barrier.theta(0) - cfg.theta_true);
    if (cfg.compare_without_barrier) {
        CostSpec plain = cfg.cost;
        plain.lambda = 0.0;
        try {
            rep.no_barrier = identify(model, plain, rep.data, init, cfg.optimizer);
            rep.no_barrier_flagged = !rep.no_barrier->events.empty();
        } catch (const EscapeError& e) {
            rep.no_barrier_abort = e.what();
            rep.no_barrier_flagged = true;
        }
    }
    return rep;
}

TanksExperiment TanksExperiment::defaults() {
    TanksExperiment e;
    e.truth.substeps = 1;
    e.input.offset = 5.5;
    e.noise.distribution = NoiseDistribution::gaussian_truncated;
    e.noise.output_scale = 0.02;
    e.noise.seed = 5;
    e.cost.gamma = 1e-3;
    // Calibrated pump gain; without it the unmeasured upper-tank level has a free scale.
    e.cost.lambda = 1e-4;
    e.cost.alpha = 500.0;
    e.cost.theta_bounds.lower = (Vec(4) << 0.0, 0.0, 0.0, 0.03).finished();
    e.cost.theta_bounds.upper = (Vec(4) << 1.0, 1.0, 1.0, 0.05).finished();
    e.physics_optimizer.rule = UpdateRule::adam;
    e.physics_optimizer.lr_theta = 1e-3;
    e.physics_optimizer.lr_x0 = 1e-2;
    e.physics_optimizer.beta2 = 0.99;
    e.physics_optimizer.max_iterations = 3000;
    e.physics_optimizer.eps_cost = 0.0;
    e.augmented_optimizer = e.physics_optimizer;
    e.augmented_optimizer.lr_weights = 3e-3;
    e.augmented_optimizer.max_iterations = 20000;
    e.dictionary = default_dictionary().names();
    e.w_init_scale = 0.1;
    return e;
}

namespace {

double prediction_rmse(const ParametricModel& model, const IdentResult& r, const Dataset& d) {
    SimulationOptions so;
    so.throw_on_escape = false;
    const Trajectory tr = simulate(model, r.x0, r.theta, d.u, r.bb ? &*r.bb : nullptr, so);
    if (tr.escaped) return std::numeric_limits<double>::infinity();
    return rmse(d.z, tr.z);
}

}  // namespace

TanksReport run_tanks(const TanksExperiment& cfg) {
    if (cfg.horizon < 2) throw ConfigError("run_tanks: horizon must be at least 2");
    TanksReport rep;
    rep.config = cfg;
    NoiseModel nt = cfg.noise, nv = cfg.noise;
    nv.seed = cfg.noise.seed + 1;
    rep.measured = !cfg.train_csv.empty() && !cfg.validation_csv.empty();
    if (rep.measured) {
        rep.train = read_cts_csv(cfg.train_csv, cfg.truth.Ts);
        rep.validation = read_cts_csv(cfg.validation_csv, cfg.truth.Ts);
    } else {
        rep.train = gen_tanks(cfg.truth, multisine_steps(cfg.horizon, cfg.input, cfg.train_seed), nt);
        rep.validation = gen_tanks(cfg.truth, multisine_steps(cfg.horizon, cfg.input, cfg.validation_seed), nv);
    }

    const ParametricModel model = cascaded_tanks(cfg.truth.Ts);
    IdentInit init;
    init.theta = cfg.k_init;
    init.x0 = cfg.physics_optimizer.estimate_x0 ? Vec(Vec::Constant(2, rep.train.z(0, 0))) : cfg.truth.x0;
    rep.physics = identify(model, cfg.cost, rep.train, init, cfg.physics_optimizer);
    rep.rmse_train_physics = prediction_rmse(model, rep.physics, rep.train);
    rep.rmse_validation_physics = prediction_rmse(model, rep.physics, rep.validation);
    if (!rep.measured)
        rep.k_relative_error = (rep.physics.theta - cfg.truth.k).cwiseAbs().cwiseQuotient(cfg.truth.k.cwiseAbs());

    if (!cfg.augmented) return rep;
    BlackBox bb(2, 1, BasisDictionary::from_names(cfg.dictionary));
    bb.w *= cfg.w_init_scale;
    IdentInit ainit = init;
    ainit.bb = bb;
    rep.augmented = identify(model, cfg.cost, rep.train, ainit, cfg.augmented_optimizer);
    const IdentResult& a = *rep.augmented;
    rep.rmse_train_augmented = prediction_rmse(model, a, rep.train);
    rep.rmse_validation_augmented = prediction_rmse(model, a, rep.validation);
    if (!rep.measured) rep.k_relative_error = (a.theta - cfg.truth.k).cwiseAbs().cwiseQuotient(cfg.truth.k.cwiseAbs());

    if (!cfg.certify) return rep;
    try {
        LinearizedSplit ls = linearize_multistep(model, *a.bb, rep.train, a.theta, a.x0, 0.0);
        const Vec omega = Eigen::Map<const Vec>(a.bb->omega.data(), a.bb->n_omega());
        ls.split.mu = cfg.certify_mu_scale * (ls.split.z - ls.split.xi * a.theta - ls.split.phi * omega).norm();
        rep.certification = certify_split(ls.split);
        if (!rep.certification->certificate) rep.certification_note = rep.certification->declined;
    } catch (const Error& e) {
        rep.certification_note = e.what();
    }
    return rep;
}

}  // namespace greybox
