#include "greybox/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace greybox {

json number_to_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double number_from_json(const json& j, const std::string& what) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    throw ConfigError(what + ": expected a number");
}

namespace {

json num(double v) { return number_to_json(v); }

double num_from(const json& j, const std::string& what) { return number_from_json(j, what); }

json indices(const std::vector<Index>& v) {
    json a = json::array();
    for (Index i : v) a.push_back(i);
    return a;
}

}  // namespace

json to_json(const Vec& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
    return a;
}

json to_json(const Mat& m) {
    json a = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(num(m(r, c)));
        a.push_back(row);
    }
    return a;
}

Vec vec_from_json(const json& j, const std::string& what) {
    if (j.is_number()) return Vec::Constant(1, j.get<double>());
    if (!j.is_array()) throw ConfigError(what + ": expected an array of numbers");
    Vec v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = num_from(j[i], what);
    return v;
}

Mat mat_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw ConfigError(what + ": expected nested arrays");
    if (j.empty()) return Mat(0, 0);
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    Mat m(static_cast<Index>(j.size()), static_cast<Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(what + ": ragged matrix");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Index>(r), static_cast<Index>(c)) = num_from(j[r][c], what);
    }
    return m;
}

json to_json(const BlackBox& bb) {
    return json{{"nx", bb.nx()},
                {"nu", bb.nu()},
                {"dictionary", bb.dictionary().names()},
                {"omega", to_json(bb.omega)},
                {"w", to_json(bb.w)},
                {"b", to_json(bb.b)}};
}

BlackBox blackbox_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("black box: expected an object");
    for (const char* k : {"nx", "nu", "dictionary", "omega", "w", "b"})
        if (!j.contains(k)) throw ConfigError(std::string("black box: missing key ") + k);
    BlackBox bb(j.at("nx").get<Index>(), j.at("nu").get<Index>(),
                BasisDictionary::from_names(j.at("dictionary").get<std::vector<std::string>>()));
    const Mat omega = mat_from_json(j.at("omega"), "black box omega");
    const Mat w = mat_from_json(j.at("w"), "black box w");
    const Mat b = mat_from_json(j.at("b"), "black box b");
    if (omega.rows() != bb.omega.rows() || omega.cols() != bb.omega.cols() || w.rows() != bb.w.rows() ||
        w.cols() != bb.w.cols() || b.rows() != bb.b.rows() || b.cols() != bb.b.cols())
        throw ConfigError("black box: weight shapes do not match the dimensions");
    bb.omega = omega;
    bb.w = w;
    bb.b = b;
    return bb;
}

json to_json(const CostBreakdown& c) {
    return json{{"loss", num(c.loss)},
                {"inequality", num(c.inequality)},
                {"equality", num(c.equality)},
                {"regularization", num(c.regularization)},
                {"total", num(c.total)}};
}

json to_json(const MonitorVerdict& v) { return json{{"kind", to_string(v.kind)}, {"step", v.step}}; }

json to_json(const IdentResult& r, std::size_t max_history) {
    json hist = json::array();
    const std::size_t n = r.history.size();
    const std::size_t stride = (max_history > 1 && n > max_history) ? (n + max_history - 2) / (max_history - 1) : 1;
    for (std::size_t i = 0; i < n; ++i) {
        if (i % stride != 0 && i + 1 != n) continue;
        const HistoryEntry& h = r.history[i];
        hist.push_back({{"iteration", h.iteration},
                        {"cost", num(h.cost)},
                        {"grad_norm", num(h.grad_norm)},
                        {"rate_scale", h.rate_scale},
                        {"verdict", to_string(h.verdict)}});
    }
    json events = json::array();
    std::size_t shown = 0;
    for (const MonitorEvent& e : r.events) {
        if (++shown > 100) break;
        events.push_back({{"iteration", e.iteration}, {"verdict", to_json(e.verdict)}, {"backoff", e.backoff}});
    }
    json j{{"theta", to_json(r.theta)},
           {"x0", to_json(r.x0)},
           {"final_cost", num(r.final_cost)},
           {"breakdown", to_json(r.breakdown)},
           {"iterations", r.iterations},
           {"stop", to_string(r.stop)},
           {"converged", r.converged},
           {"backoffs", r.backoffs},
           {"clamp_events", r.clamp_events},
           {"monitor_event_count", r.events.size()},
           {"monitor_events", events},
           {"history", hist}};
    if (r.bb) {
        j["blackbox"] = to_json(*r.bb);
        j["omega_raw"] = to_json(r.omega_raw);
    }
    return j;
}

json to_json(const SparsityCertificate& c) {
    return json{{"M", c.M},
                {"eta", num(c.eta)},
                {"n", c.n},
                {"sigma2_min", num(c.sigma2_min)},
                {"qn1_v", num(c.qn1_v)},
                {"qn2M_v", num(c.qn2M_v)},
                {"qn1_hat", num(c.qn1_hat)},
                {"qn2M_hat", num(c.qn2M_hat)},
                {"bound_v", num(c.bound_v)},
                {"bound_hat", num(c.bound_hat)},
                {"residual_v", num(c.residual_v)},
                {"mu", num(c.mu)},
                {"lambda_set", indices(c.lambda_set)},
                {"support", indices(c.support)},
                {"kappa_bar", c.kappa_bar},
                {"support_equivalent", c.support_equivalent},
                {"maximally_sparse", c.maximally_sparse},
                {"column_norms", to_json(c.column_norms)},
                {"sign_convention", c.sign_convention}};
}

json to_json(const CertificationRun& run) {
    json j{{"omega_hat", to_json(run.omega_hat)}, {"theta_hat", to_json(run.theta_hat)},
           {"relaxed_residual", num(run.relaxed.residual)}, {"relaxed_active", run.relaxed.constraint_active}};
    if (run.certificate) {
        j["certificate"] = to_json(*run.certificate);
        j["verification_omega"] = to_json(Vec(run.verification.omega.cwiseQuotient(run.normalized.scale)));
    } else {
        j["certificate"] = nullptr;
        j["declined"] = run.declined;
    }
    return j;
}

json to_json(const IdentifiabilityReport& r) {
    return json{{"hessian", to_json(r.hessian)},
                {"eigenvalues", to_json(r.eigenvalues)},
                {"lambda_min", num(r.lambda_min)},
                {"lambda_max", num(r.lambda_max)},
                {"condition", num(r.condition)},
                {"positive_definite", r.positive_definite},
                {"escaped", indices(r.escaped)}};
}

json to_json(const ErrorBoundEstimate& e) {
    return json{{"M_u", num(e.M_u)},
                {"M_z", num(e.M_z)},
                {"eta_u", num(e.eta_u)},
                {"eta_z", num(e.eta_z)},
                {"delta_bar", num(e.delta_bar)},
                {"bound", num(e.bound)},
                {"M_delta", e.m_delta},
                {"samples", e.samples},
                {"sample_M_u", e.sample_M_u},
                {"sample_M_z", e.sample_M_z}};
}

json to_json(const LogisticReport& r) {
    json j{{"experiment", "logistic"},
           {"theta_true", r.config.theta_true},
           {"theta_init", r.config.theta_init},
           {"horizon", r.config.horizon},
           {"barrier", to_json(r.barrier)},
           {"theta_error", num(r.theta_error)},
           {"no_barrier_flagged", r.no_barrier_flagged}};
    if (r.no_barrier) j["no_barrier"] = to_json(*r.no_barrier);
    if (!r.no_barrier_abort.empty()) j["no_barrier_abort"] = r.no_barrier_abort;
    return j;
}

json to_json(const TanksReport& r) {
    const TanksReference ref;
    json table = json::array();
    table.push_back({{"model", "physics"}, {"train", num(r.rmse_train_physics)},
                     {"validation", num(r.rmse_validation_physics)}});
    if (r.augmented)
        table.push_back({{"model", "augmented"}, {"train", num(r.rmse_train_augmented)},
                         {"validation", num(r.rmse_validation_augmented)}});
    json j{{"experiment", "tanks"},
           {"data", r.measured ? "measured" : "synthetic"},
           {"horizon", r.train.horizon()},
           {"rmse", table},
           {"reference_rmse",
            {{"note", "published values on the measured benchmark, for context only"},
             {"physics", {{"train", ref.physics_train}, {"validation", ref.physics_validation}}},
             {"augmented", {{"train", ref.augmented_train}, {"validation", ref.augmented_validation}}}}},
           {"physics", to_json(r.physics)}};
    if (!r.measured) {
        j["k_true"] = to_json(r.config.truth.k);
        j["k_relative_error"] = to_json(r.k_relative_error);
    }
    if (r.augmented) {
        j["augmented"] = to_json(*r.augmented);
        j["validation_ratio"] = num(r.rmse_validation_augmented / r.rmse_validation_physics);
    }
    if (r.certification) j["certification"] = to_json(*r.certification);
    if (!r.certification_note.empty()) j["certification_note"] = r.certification_note;
    return j;
}

json error_json(const std::string& kind, const std::string& message, int exit_code) {
    return json{{"schema", kSchemaVersion},
                {"error", {{"kind", kind}, {"message", message}, {"exit_code", exit_code}}}};
}

json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json_text(ss.str(), path);
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << "\n";
}

void write_history_csv(const std::string& path, const IdentResult& r) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "iteration,cost,grad_norm,rate_scale,verdict\n" << std::setprecision(17);
    for (const HistoryEntry& h : r.history)
        out << h.iteration << "," << h.cost << "," << h.grad_norm << "," << h.rate_scale << "," << to_string(h.verdict)
            << "\n";
}

void write_trace_csv(const std::string& path, const GradientTrace& trace) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    write_trace_csv(out, trace);
}

}  // namespace greybox
