#include "greybox/config.hpp"

#include <algorithm>
#include <initializer_list>

namespace greybox {

namespace {

using greybox::to_json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; });
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

std::string path(const std::string& where, const char* key) { return where + "." + key; }

void read(const json& j, const char* key, double& out, const std::string& where) {
    if (j.contains(key)) out = number_from_json(j.at(key), path(where, key));
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path(where, key) + ": wrong type");
    }
}

void read_vec(const json& j, const char* key, Vec& out, const std::string& where) {
    if (j.contains(key)) out = vec_from_json(j.at(key), path(where, key));
}

void read_opt_vec(const json& j, const char* key, std::optional<Vec>& out, const std::string& where) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null())
        out.reset();
    else
        out = vec_from_json(j.at(key), path(where, key));
}

json opt_vec(const std::optional<Vec>& v) { return v ? to_json(*v) : json(nullptr); }

std::string barrier_name(BarrierForm f) { return f == BarrierForm::squared_norm ? "squared_norm" : "plain_sum"; }

BarrierForm barrier_from(const json& j, const std::string& where) {
    const std::string s = j.is_string() ? j.get<std::string>() : "";
    if (s == "squared_norm") return BarrierForm::squared_norm;
    if (s == "plain_sum") return BarrierForm::plain_sum;
    throw ConfigError(where + ": expected squared_norm or plain_sum");
}

json to_json(const Bounds& b) { return json{{"lower", opt_vec(b.lower)}, {"upper", opt_vec(b.upper)}}; }

void apply_bounds(const json& j, Bounds& b, const std::string& where) {
    if (j.is_null()) {
        b = Bounds{};
        return;
    }
    check_keys(j, {"lower", "upper"}, where);
    read_opt_vec(j, "lower", b.lower, where);
    read_opt_vec(j, "upper", b.upper, where);
}

json to_json(const InputSignal& s) {
    return json{{"offset", s.offset},
                {"multisine_amplitude", s.multisine_amplitude},
                {"harmonics", s.harmonics},
                {"max_frequency", s.max_frequency},
                {"step_amplitude", s.step_amplitude},
                {"step_length", s.step_length},
                {"lower", s.lower},
                {"upper", s.upper}};
}

void apply_json(const json& j, InputSignal& s, const std::string& w) {
    check_keys(j, {"offset", "multisine_amplitude", "harmonics", "max_frequency", "step_amplitude", "step_length",
                   "lower", "upper"},
               w);
    read(j, "offset", s.offset, w);
    read(j, "multisine_amplitude", s.multisine_amplitude, w);
    read(j, "harmonics", s.harmonics, w);
    read(j, "max_frequency", s.max_frequency, w);
    read(j, "step_amplitude", s.step_amplitude, w);
    read(j, "step_length", s.step_length, w);
    read(j, "lower", s.lower, w);
    read(j, "upper", s.upper, w);
}

json to_json(const TanksTruth& t) {
    return json{{"k", to_json(t.k)},
                {"x0", to_json(t.x0)},
                {"Ts", t.Ts},
                {"substeps", t.substeps},
                {"overflow",
                 {{"enabled", t.overflow.enabled},
                  {"x_max", t.overflow.x_max},
                  {"routed_fraction", t.overflow.routed_fraction}}}};
}

void apply_json(const json& j, TanksTruth& t, const std::string& w) {
    check_keys(j, {"k", "x0", "Ts", "substeps", "overflow"}, w);
    read_vec(j, "k", t.k, w);
    read_vec(j, "x0", t.x0, w);
    read(j, "Ts", t.Ts, w);
    read(j, "substeps", t.substeps, w);
    if (j.contains("overflow")) {
        const std::string ow = path(w, "overflow");
        const json& o = j.at("overflow");
        check_keys(o, {"enabled", "x_max", "routed_fraction"}, ow);
        read(o, "enabled", t.overflow.enabled, ow);
        read(o, "x_max", t.overflow.x_max, ow);
        read(o, "routed_fraction", t.overflow.routed_fraction, ow);
    }
    if (t.k.size() != 4 || t.x0.size() != 2) throw ConfigError(w + ": k needs 4 entries and x0 needs 2");
}

json to_json(const LogisticExperiment& e) {
    return json{{"theta_true", e.theta_true},
                {"x0", e.x0},
                {"horizon", e.horizon},
                {"theta_init", e.theta_init},
                {"noise", to_json(e.noise)},
                {"cost", to_json(e.cost)},
                {"optimizer", to_json(e.optimizer)},
                {"compare_without_barrier", e.compare_without_barrier}};
}

void apply_json(const json& j, LogisticExperiment& e, const std::string& w) {
    check_keys(j, {"theta_true", "x0", "horizon", "theta_init", "noise", "cost", "optimizer",
                   "compare_without_barrier"},
               w);
    read(j, "theta_true", e.theta_true, w);
    read(j, "x0", e.x0, w);
    read(j, "horizon", e.horizon, w);
    read(j, "theta_init", e.theta_init, w);
    if (j.contains("noise")) apply_json(j.at("noise"), e.noise, path(w, "noise"));
    if (j.contains("cost")) apply_json(j.at("cost"), e.cost, path(w, "cost"));
    if (j.contains("optimizer")) apply_json(j.at("optimizer"), e.optimizer, path(w, "optimizer"));
    read(j, "compare_without_barrier", e.compare_without_barrier, w);
}

json to_json(const TanksExperiment& e) {
    return json{{"truth", to_json(e.truth)},
                {"horizon", e.horizon},
                {"input", to_json(e.input)},
                {"noise", to_json(e.noise)},
                {"train_seed", e.train_seed},
                {"validation_seed", e.validation_seed},
                {"cost", to_json(e.cost)},
                {"physics_optimizer", to_json(e.physics_optimizer)},
                {"augmented_optimizer", to_json(e.augmented_optimizer)},
                {"dictionary", e.dictionary},
                {"w_init_scale", e.w_init_scale},
                {"k_init", to_json(e.k_init)},
                {"augmented", e.augmented},
                {"certify", e.certify},
                {"certify_mu_scale", e.certify_mu_scale},
                {"train_csv", e.train_csv},
                {"validation_csv", e.validation_csv}};
}

void apply_json(const json& j, TanksExperiment& e, const std::string& w) {
    check_keys(j, {"truth", "horizon", "input", "noise", "train_seed", "validation_seed", "cost", "physics_optimizer",
                   "augmented_optimizer", "dictionary", "w_init_scale", "k_init", "augmented", "certify",
                   "certify_mu_scale", "train_csv", "validation_csv"},
               w);
    if (j.contains("truth")) apply_json(j.at("truth"), e.truth, path(w, "truth"));
    read(j, "horizon", e.horizon, w);
    if (j.contains("input")) apply_json(j.at("input"), e.input, path(w, "input"));
    if (j.contains("noise")) apply_json(j.at("noise"), e.noise, path(w, "noise"));
    read(j, "train_seed", e.train_seed, w);
    read(j, "validation_seed", e.validation_seed, w);
    if (j.contains("cost")) apply_json(j.at("cost"), e.cost, path(w, "cost"));
    if (j.contains("physics_optimizer")) apply_json(j.at("physics_optimizer"), e.physics_optimizer, path(w, "physics_optimizer"));
    if (j.contains("augmented_optimizer"))
        apply_json(j.at("augmented_optimizer"), e.augmented_optimizer, path(w, "augmented_optimizer"));
    read(j, "dictionary", e.dictionary, w);
    read(j, "w_init_scale", e.w_init_scale, w);
    read_vec(j, "k_init", e.k_init, w);
    read(j, "augmented", e.augmented, w);
    read(j, "certify", e.certify, w);
    read(j, "certify_mu_scale", e.certify_mu_scale, w);
    read(j, "train_csv", e.train_csv, w);
    read(j, "validation_csv", e.validation_csv, w);
}

}  // namespace

json to_json(const CostSpec& c) {
    return json{{"loss", c.loss.name},
                {"lambda", c.lambda},
                {"nu", c.nu},
                {"gamma", c.gamma},
                {"beta", c.beta},
                {"alpha", c.alpha},
                {"theta_bounds", to_json(c.theta_bounds)},
                {"state_bounds", to_json(c.state_bounds)},
                {"theta_barrier", barrier_name(c.theta_barrier)},
                {"state_barrier", barrier_name(c.state_barrier)}};
}

void apply_json(const json& j, CostSpec& c, const std::string& w) {
    check_keys(j, {"loss", "lambda", "nu", "gamma", "beta", "alpha", "theta_bounds", "state_bounds", "theta_barrier",
                   "state_barrier"},
               w);
    if (j.contains("loss")) {
        std::string name;
        read(j, "loss", name, w);
        if (name != "squared_error") throw ConfigError(path(w, "loss") + ": only squared_error is available");
        c.loss = squared_error_loss();
    }
    read(j, "lambda", c.lambda, w);
    read(j, "nu", c.nu, w);
    read(j, "gamma", c.gamma, w);
    read(j, "beta", c.beta, w);
    read(j, "alpha", c.alpha, w);
    if (j.contains("theta_bounds")) apply_bounds(j.at("theta_bounds"), c.theta_bounds, path(w, "theta_bounds"));
    if (j.contains("state_bounds")) apply_bounds(j.at("state_bounds"), c.state_bounds, path(w, "state_bounds"));
    if (j.contains("theta_barrier")) c.theta_barrier = barrier_from(j.at("theta_barrier"), path(w, "theta_barrier"));
    if (j.contains("state_barrier")) c.state_barrier = barrier_from(j.at("state_barrier"), path(w, "state_barrier"));
}

json to_json(const OptimizerConfig& c) {
    return json{{"lr_theta", c.lr_theta},
                {"lr_x0", c.lr_x0},
                {"lr_weights", c.lr_weights ? json(*c.lr_weights) : json(nullptr)},
                {"eps_cost", c.eps_cost},
                {"eps_grad", c.eps_grad},
                {"max_iterations", c.max_iterations},
                {"rule", to_string(c.rule)},
                {"momentum", c.momentum},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"epsilon", c.epsilon},
                {"backoff", c.backoff},
                {"max_backoffs", c.max_backoffs},
                {"project", c.project},
                {"estimate_x0", c.estimate_x0},
                {"threshold", c.threshold},
                {"innovation_budget", number_to_json(c.innovation_budget)},
                {"state_bound", number_to_json(c.state_bound)}};
}

void apply_json(const json& j, OptimizerConfig& c, const std::string& w) {
    check_keys(j, {"lr_theta", "lr_x0", "lr_weights", "eps_cost", "eps_grad", "max_iterations", "rule", "momentum",
                   "beta1", "beta2", "epsilon", "backoff", "max_backoffs", "project", "estimate_x0", "threshold",
                   "innovation_budget", "state_bound"},
               w);
    read(j, "lr_theta", c.lr_theta, w);
    read(j, "lr_x0", c.lr_x0, w);
    if (j.contains("lr_weights")) {
        if (j.at("lr_weights").is_null())
            c.lr_weights.reset();
        else
            c.lr_weights = number_from_json(j.at("lr_weights"), path(w, "lr_weights"));
    }
    read(j, "eps_cost", c.eps_cost, w);
    read(j, "eps_grad", c.eps_grad, w);
    read(j, "max_iterations", c.max_iterations, w);
    if (j.contains("rule")) {
        std::string r;
        read(j, "rule", r, w);
        try {
            c.rule = update_rule_from_string(r);
        } catch (const Error& e) {
            throw ConfigError(path(w, "rule") + ": " + e.what());
        }
    }
    read(j, "momentum", c.momentum, w);
    read(j, "beta1", c.beta1, w);
    read(j, "beta2", c.beta2, w);
    read(j, "epsilon", c.epsilon, w);
    read(j, "backoff", c.backoff, w);
    read(j, "max_backoffs", c.max_backoffs, w);
    read(j, "project", c.project, w);
    read(j, "estimate_x0", c.estimate_x0, w);
    read(j, "threshold", c.threshold, w);
    read(j, "innovation_budget", c.innovation_budget, w);
    read(j, "state_bound", c.state_bound, w);
}

json to_json(const NoiseModel& n) {
    return json{{"distribution", n.distribution == NoiseDistribution::uniform ? "uniform" : "gaussian_truncated"},
                {"input_scale", n.input_scale},
                {"output_scale", n.output_scale},
                {"seed", n.seed}};
}

void apply_json(const json& j, NoiseModel& n, const std::string& w) {
    check_keys(j, {"distribution", "input_scale", "output_scale", "seed"}, w);
    if (j.contains("distribution")) {
        std::string d;
        read(j, "distribution", d, w);
        if (d == "uniform")
            n.distribution = NoiseDistribution::uniform;
        else if (d == "gaussian_truncated")
            n.distribution = NoiseDistribution::gaussian_truncated;
        else
            throw ConfigError(path(w, "distribution") + ": expected uniform or gaussian_truncated");
    }
    read(j, "input_scale", n.input_scale, w);
    read(j, "output_scale", n.output_scale, w);
    read(j, "seed", n.seed, w);
    if (n.input_scale < 0 || n.output_scale < 0) throw ConfigError(w + ": noise scales must be non-negative");
}

RunConfig default_run_config() {
    RunConfig c;
    c.cost = c.tanks.cost;
    c.optimizer = c.tanks.augmented_optimizer;
    c.blackbox.dictionary = c.tanks.dictionary;
    c.blackbox.w_init_scale = c.tanks.w_init_scale;
    return c;
}

RunConfig parse_run_config(const json& j) {
    RunConfig c = default_run_config();
    if (j.is_null()) return c;
    const std::string w = "config";
    check_keys(j, {"experiment", "model", "cost", "optimizer", "blackbox", "theta0", "x0", "logistic", "tanks",
                   "certify", "diagnose", "gradcheck", "seed"},
               w);
    read(j, "experiment", c.experiment, w);
    if (c.experiment != "logistic" && c.experiment != "tanks")
        throw ConfigError("config.experiment: expected logistic or tanks");
    if (j.contains("model")) {
        const json& m = j.at("model");
        const std::string mw = path(w, "model");
        check_keys(m, {"name", "Ts", "nx", "nu", "C"}, mw);
        read(m, "name", c.model.name, mw);
        read(m, "Ts", c.model.Ts, mw);
        read(m, "nx", c.model.nx, mw);
        read(m, "nu", c.model.nu, mw);
        if (m.contains("C")) c.model.C = mat_from_json(m.at("C"), path(mw, "C"));
        if (c.model.name != "logistic" && c.model.name != "tanks" && c.model.name != "linear")
            throw ConfigError(mw + ".name: expected logistic, tanks or linear");
    }
    if (j.contains("cost")) apply_json(j.at("cost"), c.cost, path(w, "cost"));
    if (j.contains("optimizer")) apply_json(j.at("optimizer"), c.optimizer, path(w, "optimizer"));
    if (j.contains("blackbox")) {
        const json& b = j.at("blackbox");
        const std::string bw = path(w, "blackbox");
        check_keys(b, {"enabled", "dictionary", "w_init_scale"}, bw);
        read(b, "enabled", c.blackbox.enabled, bw);
        read(b, "dictionary", c.blackbox.dictionary, bw);
        read(b, "w_init_scale", c.blackbox.w_init_scale, bw);
    }
    read_opt_vec(j, "theta0", c.theta0, w);
    read_opt_vec(j, "x0", c.x0, w);
    if (j.contains("logistic")) apply_json(j.at("logistic"), c.logistic, path(w, "logistic"));
    if (j.contains("tanks")) apply_json(j.at("tanks"), c.tanks, path(w, "tanks"));
    if (j.contains("certify")) {
        const json& s = j.at("certify");
        const std::string sw = path(w, "certify");
        check_keys(s, {"run", "mu", "mu_scale"}, sw);
        read(s, "run", c.certify.run, sw);
        if (s.contains("mu")) {
            if (s.at("mu").is_null())
                c.certify.mu.reset();
            else
                c.certify.mu = number_from_json(s.at("mu"), path(sw, "mu"));
        }
        read(s, "mu_scale", c.certify.mu_scale, sw);
    }
    if (j.contains("diagnose")) {
        const json& s = j.at("diagnose");
        const std::string sw = path(w, "diagnose");
        check_keys(s, {"run", "include_x0", "error_bound_samples", "noise", "newton_iterations"}, sw);
        read(s, "run", c.diagnose.run, sw);
        read(s, "include_x0", c.diagnose.include_x0, sw);
        read(s, "error_bound_samples", c.diagnose.error_bound_samples, sw);
        if (s.contains("noise")) apply_json(s.at("noise"), c.diagnose.noise, path(sw, "noise"));
        read(s, "newton_iterations", c.diagnose.newton_iterations, sw);
    }
    if (j.contains("gradcheck")) {
        const json& s = j.at("gradcheck");
        const std::string sw = path(w, "gradcheck");
        check_keys(s, {"h", "horizon", "tolerance"}, sw);
        read(s, "h", c.gradcheck.h, sw);
        read(s, "horizon", c.gradcheck.horizon, sw);
        read(s, "tolerance", c.gradcheck.tolerance, sw);
    }
    read(j, "seed", c.seed, w);
    c.optimizer.validate();
    c.logistic.optimizer.validate();
    c.tanks.physics_optimizer.validate();
    c.tanks.augmented_optimizer.validate();
    return c;
}

RunConfig load_run_config(const std::string& p) {
    if (p.empty()) return default_run_config();
    return parse_run_config(read_json_file(p));
}

json to_json(const RunConfig& c) {
    json model{{"name", c.model.name}, {"Ts", c.model.Ts}, {"nx", c.model.nx}, {"nu", c.model.nu},
               {"C", to_json(c.model.C)}};
    return json{{"experiment", c.experiment},
                {"model", model},
                {"cost", to_json(c.cost)},
                {"optimizer", to_json(c.optimizer)},
                {"blackbox",
                 {{"enabled", c.blackbox.enabled},
                  {"dictionary", c.blackbox.dictionary},
                  {"w_init_scale", c.blackbox.w_init_scale}}},
                {"theta0", opt_vec(c.theta0)},
                {"x0", opt_vec(c.x0)},
                {"logistic", to_json(c.logistic)},
                {"tanks", to_json(c.tanks)},
                {"certify",
                 {{"run", c.certify.run},
                  {"mu", c.certify.mu ? json(*c.certify.mu) : json(nullptr)},
                  {"mu_scale", c.certify.mu_scale}}},
                {"diagnose",
                 {{"run", c.diagnose.run},
                  {"include_x0", c.diagnose.include_x0},
                  {"error_bound_samples", c.diagnose.error_bound_samples},
                  {"noise", to_json(c.diagnose.noise)},
                  {"newton_iterations", c.diagnose.newton_iterations}}},
                {"gradcheck",
                 {{"h", c.gradcheck.h}, {"horizon", c.gradcheck.horizon}, {"tolerance", c.gradcheck.tolerance}}},
                {"seed", c.seed}};
}

ParametricModel build_model(const ModelConfig& m) {
    if (m.name == "logistic") return logistic_map();
    if (m.name == "tanks") return cascaded_tanks(m.Ts);
    if (m.name == "linear") {
        const Mat C = m.C.size() ? m.C : Mat(Mat::Identity(m.nx, m.nx));
        return linear_state_space(m.nx, m.nu, C);
    }
    throw ConfigError("unknown model: " + m.name);
}

Vec default_theta0(const ModelConfig& m) {
    if (m.name == "logistic") return Vec::Constant(1, 3.9);
    if (m.name == "tanks") return Vec::Constant(4, 0.05);
    return Vec::Zero(m.nx * m.nx + m.nx * m.nu);
}

}  // namespace greybox
