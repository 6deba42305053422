#include "greybox/cli.hpp"

#include "greybox/bench.hpp"
#include "greybox/config.hpp"
#include "greybox/diagnostics.hpp"
#include "greybox/dynamics.hpp"
#include "greybox/gradsys.hpp"
#include "greybox/io.hpp"
#include "greybox/optimizer.hpp"
#include "greybox/sparsity.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>

namespace greybox {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
    std::string config;
    std::string data;
    std::string out = ".";
    std::optional<unsigned long long> seed;
    std::optional<Index> horizon;
    bool no_blackbox = false;
};

void add_common(CLI::App* app, CommonArgs& a) {
    app->add_option("--config", a.config, "JSON config file (comments allowed)");
    app->add_option("--data", a.data, "dataset CSV");
    app->add_option("--out", a.out, "output directory")->capture_default_str();
    app->add_option("--seed", a.seed, "random seed override");
    app->add_option("--horizon", a.horizon, "horizon T override")->check(CLI::PositiveNumber);
    app->add_flag("--no-blackbox", a.no_blackbox, "physics-only model");
}

struct Context {
    CommonArgs args;
    RunConfig cfg;
    std::ostream* out = nullptr;

    std::string out_path(const std::string& name) const { return (fs::path(args.out) / name).string(); }
};

Context make_context(const CommonArgs& a, std::ostream& out) {
    Context c;
    c.args = a;
    c.cfg = load_run_config(a.config);
    if (a.seed) c.cfg.seed = *a.seed;
    if (a.no_blackbox) c.cfg.blackbox.enabled = false;
    c.out = &out;
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw ConfigError("cannot create output directory " + a.out + ": " + ec.message());
    return c;
}

json report_header(const Context& c, const std::string& command) {
    return json{{"schema", kSchemaVersion}, {"command", command}, {"config", to_json(c.cfg)}};
}

Dataset load_dataset(const Context& c, const ParametricModel& model) {
    if (c.args.data.empty()) throw ConfigError("--data is required for this command");
    std::ifstream in(c.args.data);
    if (!in) throw ConfigError("cannot open " + c.args.data);
    std::string first;
    std::getline(in, first);
    in.close();
    const Dimensions& d = model.dims();
    Dataset data = first.rfind("k", 0) == 0 ? read_dataset_csv(c.args.data, d.nu, d.nz, c.cfg.model.Ts)
                                            : read_cts_csv(c.args.data, c.cfg.model.Ts);
    data.validate(d);
    if (c.args.horizon) {
        if (*c.args.horizon > data.horizon()) throw ConfigError("--horizon exceeds the dataset length");
        data = data.slice(0, *c.args.horizon);
    }
    return data;
}

Vec initial_state(const Context& c, const ParametricModel& model, const Dataset& data) {
    if (c.cfg.x0) return *c.cfg.x0;
    const Dimensions& d = model.dims();
    if (c.cfg.model.name == "tanks") return Vec::Constant(2, data.z(0, 0));
    if (d.nz == d.nx && data.is_observed(0)) return data.z.col(0);
    return Vec::Zero(d.nx);
}

std::optional<BlackBox> initial_blackbox(const Context& c, const ParametricModel& model) {
    if (!c.cfg.blackbox.enabled) return std::nullopt;
    BlackBox bb(model.dims().nx, model.dims().nu, BasisDictionary::from_names(c.cfg.blackbox.dictionary));
    bb.w *= c.cfg.blackbox.w_init_scale;
    return bb;
}

IdentResult run_identify(const Context& c, const ParametricModel& model, const Dataset& data) {
    IdentInit init;
    init.theta = c.cfg.theta0 ? *c.cfg.theta0 : default_theta0(c.cfg.model);
    init.x0 = initial_state(c, model, data);
    init.bb = initial_blackbox(c, model);
    return identify(model, c.cfg.cost, data, init, c.cfg.optimizer);
}

IdentResult load_run(const std::string& path, const ParametricModel& model) {
    const json j = read_json_file(path);
    const json& r = j.contains("result") ? j.at("result") : j;
    if (!r.contains("theta") || !r.contains("x0")) throw ConfigError(path + ": not an identification result");
    IdentResult res;
    res.theta = vec_from_json(r.at("theta"), "theta");
    res.x0 = vec_from_json(r.at("x0"), "x0");
    if (res.theta.size() != model.dims().ntheta || res.x0.size() != model.dims().nx)
        throw ConfigError(path + ": result does not match the configured model");
    if (r.contains("blackbox")) res.bb = blackbox_from_json(r.at("blackbox"));
    return res;
}

int cmd_identify(const Context& c) {
    const ParametricModel model = build_model(c.cfg.model);
    const Dataset data = load_dataset(c, model);
    const IdentResult res = run_identify(c, model, data);
    json rep = report_header(c, "identify");
    rep["model"] = model.name();
    rep["data"] = c.args.data;
    rep["result"] = to_json(res);
    write_json_file(c.out_path("ident.json"), rep);
    write_history_csv(c.out_path("history.csv"), res);
    const FullGradient fin = full_gradient(model, res.bb ? &*res.bb : nullptr, c.cfg.cost, data, res.theta, res.x0);
    write_trace_csv(c.out_path("trace.csv"), fin.trace);
    *c.out << "identify: stop=" << to_string(res.stop) << " iterations=" << res.iterations
           << " cost=" << std::setprecision(10) << res.final_cost << " theta=[";
    for (Index i = 0; i < res.theta.size(); ++i) *c.out << (i ? ", " : "") << res.theta(i);
    *c.out << "]\n";
    return kExitOk;
}

Dataset synthetic_for(const Context& c, const ParametricModel& model, Index T) {
    if (c.cfg.model.name == "logistic") return gen_logistic(c.cfg.logistic.theta_true, c.cfg.logistic.x0, T);
    if (c.cfg.model.name == "tanks") {
        TanksTruth truth = c.cfg.tanks.truth;
        truth.Ts = c.cfg.model.Ts;
        return gen_tanks(truth, multisine_steps(T, c.cfg.tanks.input, c.cfg.seed), c.cfg.tanks.noise);
    }
    std::mt19937_64 rng(c.cfg.seed);
    std::normal_distribution<double> n(0.0, 1.0);
    const Dimensions& d = model.dims();
    Mat u(d.nu, T);
    for (Index i = 0; i < u.size(); ++i) u(i) = n(rng);
    Vec theta = Vec::Zero(d.ntheta);
    for (Index i = 0; i < d.nx; ++i) theta(i * d.nx + i) = 0.5;
    for (Index i = d.nx * d.nx; i < d.ntheta; ++i) theta(i) = 0.5 * n(rng);
    const Trajectory tr = simulate(model, Vec::Zero(d.nx), theta, u);
    Dataset data;
    data.u = u;
    data.z = tr.z;
    data.Ts = c.cfg.model.Ts;
    return data;
}

int cmd_gradcheck(const Context& c) {
    const ParametricModel model = build_model(c.cfg.model);
    const Index T = c.args.horizon ? *c.args.horizon : c.cfg.gradcheck.horizon;
    const Dataset data = c.args.data.empty() ? synthetic_for(c, model, T) : load_dataset(c, model);
    const Vec theta = c.cfg.theta0 ? *c.cfg.theta0 : default_theta0(c.cfg.model);
    const Vec x0 = initial_state(c, model, data);
    std::optional<BlackBox> bb = initial_blackbox(c, model);
    if (bb) {
        std::mt19937_64 rng(c.cfg.seed);
        std::uniform_real_distribution<double> small(-0.05, 0.05), wide(-0.5, 0.5);
        for (Index i = 0; i < bb->omega.size(); ++i) bb->omega(i) = small(rng);
        for (Index i = 0; i < bb->w.size(); ++i) bb->w(i) = 2.0 * small(rng);
        for (Index i = 0; i < bb->b.size(); ++i) bb->b(i) = wide(rng);
    }
    const GradientCheck chk =
        check_gradient(model, bb ? &*bb : nullptr, c.cfg.cost, data, theta, x0, c.cfg.gradcheck.h);
    const bool pass = chk.max_rel_error <= c.cfg.gradcheck.tolerance && chk.escaped.empty();
    json rep = report_header(c, "gradcheck");
    rep["model"] = model.name();
    rep["horizon"] = data.horizon();
    rep["n_parameters"] = chk.exact.size();
    rep["max_rel_error"] = number_to_json(chk.max_rel_error);
    rep["max_abs_error"] = number_to_json(chk.max_abs_error);
    rep["worst_index"] = chk.worst;
    rep["tolerance"] = c.cfg.gradcheck.tolerance;
    rep["pass"] = pass;
    rep["exact"] = to_json(chk.exact);
    rep["finite_difference"] = to_json(chk.fd);
    write_json_file(c.out_path("gradcheck.json"), rep);
    *c.out << "gradcheck: " << model.name() << " T=" << data.horizon() << " parameters=" << chk.exact.size()
           << " max relative error " << std::scientific << std::setprecision(3) << chk.max_rel_error
           << std::defaultfloat << (pass ? " (ok)" : " (above tolerance)") << "\n";
    return pass ? kExitOk : kExitNumerical;
}

int cmd_certify(const Context& c) {
    const ParametricModel model = build_model(c.cfg.model);
    const Dataset data = load_dataset(c, model);
    const IdentResult res = c.cfg.certify.run.empty() ? run_identify(c, model, data) : load_run(c.cfg.certify.run, model);
    if (!res.bb) throw ConfigError("certify: the run has no black-box component");
    LinearizedSplit ls = linearize_multistep(model, *res.bb, data, res.theta, res.x0, 0.0);
    const Vec omega = Eigen::Map<const Vec>(res.bb->omega.data(), res.bb->n_omega());
    const double resid = (ls.split.z - ls.split.xi * res.theta - ls.split.phi * omega).norm();
    ls.split.mu = c.cfg.certify.mu ? *c.cfg.certify.mu : c.cfg.certify.mu_scale * resid;
    json rep = report_header(c, "certify");
    rep["model"] = model.name();
    rep["residual_at_estimate"] = resid;
    rep["mu"] = ls.split.mu;
    rep["identified_omega"] = to_json(omega);
    rep["certification"] = to_json(certify_split(ls.split));
    write_json_file(c.out_path("certificate.json"), rep);
    const json& cert = rep["certification"];
    if (!cert["certificate"].is_null())
        *c.out << "certify: maximally_sparse=" << (cert["certificate"]["maximally_sparse"].get<bool>() ? "true" : "false")
               << " support_equivalent="
               << (cert["certificate"]["support_equivalent"].get<bool>() ? "true" : "false") << "\n";
    else
        *c.out << "certify: declined\n";
    return kExitOk;
}

void write_tanks_outputs(const Context& c, const TanksReport& r) {
    const ParametricModel model = cascaded_tanks(r.config.truth.Ts);
    SimulationOptions so;
    so.throw_on_escape = false;
    const Trajectory tp = simulate(model, r.physics.x0, r.physics.theta, r.validation.u, nullptr, so);
    std::optional<Trajectory> ta;
    if (r.augmented)
        ta = simulate(model, r.augmented->x0, r.augmented->theta, r.validation.u, &*r.augmented->bb, so);
    std::ofstream out(c.out_path("tanks_validation.csv"));
    if (!out) throw ConfigError("cannot write tanks_validation.csv");
    out << "k,u,z,zhat_physics" << (ta ? ",zhat_augmented" : "") << "\n" << std::setprecision(17);
    for (Index k = 0; k < r.validation.horizon(); ++k) {
        out << k << "," << r.validation.u(0, k) << "," << r.validation.z(0, k) << "," << tp.z(0, k);
        if (ta) out << "," << ta->z(0, k);
        out << "\n";
    }
    write_history_csv(c.out_path("tanks_history_physics.csv"), r.physics);
    if (r.augmented) write_history_csv(c.out_path("tanks_history_augmented.csv"), *r.augmented);
}

int cmd_bench(const Context& base, const std::string& which, bool all) {
    Context c = base;
    if (c.args.horizon) {
        c.cfg.logistic.horizon = *c.args.horizon;
        c.cfg.tanks.horizon = *c.args.horizon;
    }
    if (c.args.seed) {
        c.cfg.logistic.noise.seed = *c.args.seed;
        c.cfg.tanks.noise.seed = *c.args.seed + 2;
        c.cfg.tanks.train_seed = *c.args.seed;
        c.cfg.tanks.validation_seed = *c.args.seed + 1;
    }
    if (c.args.no_blackbox) c.cfg.tanks.augmented = false;
    const bool do_log = all || which == "logistic";
    const bool do_tanks = all || which == "tanks";
    if (!do_log && !do_tanks) throw ConfigError("bench: expected logistic, tanks or --all");

    std::future<LogisticReport> flog;
    std::future<TanksReport> ftanks;
    if (do_log) flog = std::async(std::launch::async, [cfg = c.cfg.logistic] { return run_logistic(cfg); });
    if (do_tanks) ftanks = std::async(std::launch::async, [cfg = c.cfg.tanks] { return run_tanks(cfg); });
    if (do_log) {
        const LogisticReport r = flog.get();
        json rep = report_header(c, "bench");
        rep["report"] = to_json(r);
        write_json_file(c.out_path("bench_logistic.json"), rep);
        write_history_csv(c.out_path("logistic_history.csv"), r.barrier);
        *c.out << "bench logistic: theta*=" << std::setprecision(6) << r.barrier.theta(0)
               << " |theta*-theta_true|=" << r.theta_error
               << " unconstrained run flagged=" << (r.no_barrier_flagged ? "yes" : "no") << "\n";
    }
    if (do_tanks) {
        const TanksReport r = ftanks.get();
        json rep = report_header(c, "bench");
        rep["report"] = to_json(r);
        write_json_file(c.out_path("bench_tanks.json"), rep);
        write_tanks_outputs(c, r);
        *c.out << "bench tanks: rmse physics " << std::setprecision(4) << r.rmse_train_physics << "/"
               << r.rmse_validation_physics;
        if (r.augmented) *c.out << ", augmented " << r.rmse_train_augmented << "/" << r.rmse_validation_augmented;
        *c.out << " (train/validation)\n";
    }
    return kExitOk;
}

int cmd_gen_data(const Context& base, const std::string& which) {
    Context c = base;
    const std::string exp = which.empty() ? c.cfg.experiment : which;
    if (exp == "logistic") {
        LogisticExperiment e = c.cfg.logistic;
        if (c.args.horizon) e.horizon = *c.args.horizon;
        if (c.args.seed) e.noise.seed = *c.args.seed;
        const Dataset d = gen_logistic(e.theta_true, e.x0, e.horizon, e.noise);
        write_dataset_csv(c.out_path("logistic.csv"), d);
        *c.out << "gen-data: wrote " << c.out_path("logistic.csv") << "\n";
        return kExitOk;
    }
    if (exp == "tanks") {
        TanksExperiment e = c.cfg.tanks;
        if (c.args.horizon) e.horizon = *c.args.horizon;
        if (c.args.seed) {
            e.noise.seed = *c.args.seed + 2;
            e.train_seed = *c.args.seed;
            e.validation_seed = *c.args.seed + 1;
        }
        NoiseModel nv = e.noise;
        nv.seed = e.noise.seed + 1;
        write_cts_csv(c.out_path("tanks_train.csv"), gen_tanks(e.truth, multisine_steps(e.horizon, e.input, e.train_seed), e.noise));
        write_cts_csv(c.out_path("tanks_validation.csv"),
                      gen_tanks(e.truth, multisine_steps(e.horizon, e.input, e.validation_seed), nv));
        *c.out << "gen-data: wrote " << c.out_path("tanks_train.csv") << " and " << c.out_path("tanks_validation.csv")
               << "\n";
        return kExitOk;
    }
    throw ConfigError("gen-data: expected logistic or tanks");
}

int cmd_diagnose(const Context& c) {
    const ParametricModel model = build_model(c.cfg.model);
    const Dataset data = load_dataset(c, model);
    const IdentResult res =
        c.cfg.diagnose.run.empty() ? run_identify(c, model, data) : load_run(c.cfg.diagnose.run, model);
    const BlackBox* bb = res.bb ? &*res.bb : nullptr;
    const IdentifiabilityReport h =
        hessian_estimate(model, bb, c.cfg.cost, data, res.theta, res.x0, c.cfg.diagnose.include_x0);
    json rep = report_header(c, "diagnose");
    rep["model"] = model.name();
    rep["theta"] = to_json(res.theta);
    rep["x0"] = to_json(res.x0);
    rep["identifiability"] = to_json(h);
    if (c.cfg.diagnose.error_bound_samples > 0) {
        if (bb) throw ConfigError("diagnose: the error bound is available for physics-only runs (use --no-blackbox)");
        const NoiseModel& noise = c.cfg.diagnose.noise;
        const Trajectory clean = simulate(model, res.x0, res.theta, data.u);
        DatasetGenerator gen = [&](std::mt19937_64& rng) {
            Dataset d = data;
            d.observed.clear();
            for (Index i = 0; i < d.u.size(); ++i) d.u(i) += noise.draw(noise.input_scale, rng);
            d.z = clean.z;
            for (Index i = 0; i < d.z.size(); ++i) d.z(i) += noise.draw(noise.output_scale, rng);
            return d;
        };
        ThetaSolver solve = [&](const Dataset& d) {
            return newton_identify(model, c.cfg.cost, d, res.theta, res.x0, c.cfg.diagnose.newton_iterations);
        };
        const ErrorBoundEstimate eb =
            error_bound_mc(model, c.cfg.cost, gen, solve, res.x0, noise, c.cfg.diagnose.error_bound_samples);
        rep["error_bound"] = to_json(eb);
    }
    write_json_file(c.out_path("diagnose.json"), rep);
    *c.out << "diagnose: positive_definite=" << (h.positive_definite ? "true" : "false") << " condition="
           << std::setprecision(4) << h.condition << "\n";
    return kExitOk;
}

int fail(std::ostream& err, const std::string& kind, const std::string& message, int code) {
    err << error_json(kind, message, code).dump() << "\n";
    return code;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Grey-box system identification with sparse black-box augmentation", "greybox"};
    app.require_subcommand(1);
    CommonArgs a_ident, a_grad, a_cert, a_bench, a_gen, a_diag;
    std::string bench_which, gen_which;
    bool bench_all = false;

    CLI::App* identify = app.add_subcommand("identify", "fit theta, x0 and the black box to a dataset");
    add_common(identify, a_ident);
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "compare the sensitivity gradient with finite differences");
    add_common(gradcheck, a_grad);
    CLI::App* certify = app.add_subcommand("certify", "sparsity certificate for an identified run");
    add_common(certify, a_cert);
    CLI::App* bench = app.add_subcommand("bench", "run the logistic and/or tanks experiment");
    add_common(bench, a_bench);
    bench->add_option("experiment", bench_which, "logistic or tanks");
    bench->add_flag("--all", bench_all, "run every experiment");
    CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    add_common(gen, a_gen);
    gen->add_option("experiment", gen_which, "logistic or tanks (default from config)");
    CLI::App* diagnose = app.add_subcommand("diagnose", "identifiability Hessian and error bound");
    add_common(diagnose, a_diag);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return fail(err, "usage", e.what(), kExitConfig);
    }

    try {
        if (*identify) return cmd_identify(make_context(a_ident, out));
        if (*gradcheck) return cmd_gradcheck(make_context(a_grad, out));
        if (*certify) return cmd_certify(make_context(a_cert, out));
        if (*bench) return cmd_bench(make_context(a_bench, out), bench_which, bench_all);
        if (*gen) return cmd_gen_data(make_context(a_gen, out), gen_which);
        if (*diagnose) return cmd_diagnose(make_context(a_diag, out));
    } catch (const ConfigError& e) {
        return fail(err, "ConfigError", e.what(), kExitConfig);
    } catch (const json::exception& e) {
        return fail(err, "ConfigError", e.what(), kExitConfig);
    } catch (const EscapeAbortError& e) {
        return fail(err, "EscapeAbort", e.what(), kExitNumerical);
    } catch (const EscapeError& e) {
        return fail(err, "FiniteEscape", e.what(), kExitNumerical);
    } catch (const NotIdentifiableError& e) {
        return fail(err, "NotIdentifiable", e.what(), kExitNumerical);
    } catch (const InfeasibleError& e) {
        return fail(err, "Infeasible", e.what(), kExitNumerical);
    } catch (const Error& e) {
        return fail(err, "NumericalError", e.what(), kExitNumerical);
    } catch (const std::exception& e) {
        return fail(err, "NumericalError", e.what(), kExitNumerical);
    }
    return fail(err, "usage", "no subcommand", kExitConfig);
}

int dispatch(int argc, const char* const* argv) { return dispatch(argc, argv, std::cout, std::cerr); }

}  // namespace greybox
