#include "greybox/dynamics.hpp"

#include "greybox/blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace greybox {

namespace {

std::string describe(const Vec& v) {
    std::ostringstream os;
    os << "[";
    for (Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
    os << "]";
    return os.str();
}

double fd_step(double v) { return std::max(1e-6, 1e-6 * std::abs(v)); }

}  // namespace

ParametricModel::ParametricModel(std::string name, Dimensions dims, StateMap f, ObsMap h, Analytic jac)
    : name_(std::move(name)), dims_(dims), f_(std::move(f)), h_(std::move(h)), jac_(std::move(jac)) {
    if (!f_ || !h_) throw ConfigError("model '" + name_ + "': f and h are required");
    if (dims_.nx <= 0 || dims_.nz <= 0 || dims_.nu < 0 || dims_.ntheta < 0)
        throw ConfigError("model '" + name_ + "': invalid dimensions");
}

bool ParametricModel::has_analytic_jacobians() const {
    return static_cast<bool>(jac_.dfdx) && static_cast<bool>(jac_.dfdtheta) && static_cast<bool>(jac_.dhdx);
}

void ParametricModel::check_dims(const Vec& x, const Vec& u, const Vec& theta) const {
    if (x.size() != dims_.nx || u.size() != dims_.nu || theta.size() != dims_.ntheta)
        throw ConfigError("model '" + name_ + "': argument dimensions do not match");
}

Vec ParametricModel::step(const Vec& x, const Vec& u, const Vec& theta) const {
    check_dims(x, u, theta);
    Vec next = f_(x, u, theta);
    if (next.size() != dims_.nx) throw ConfigError("model '" + name_ + "': f returned wrong size");
    if (!next.allFinite()) throw EscapeError(-1, "non-finite state from f at x=" + describe(x));
    return next;
}

Vec ParametricModel::observe(const Vec& x) const {
    if (x.size() != dims_.nx) throw ConfigError("model '" + name_ + "': state dimension mismatch");
    Vec z = h_(x);
    if (z.size() != dims_.nz) throw ConfigError("model '" + name_ + "': h returned wrong size");
    if (!z.allFinite()) throw EscapeError(-1, "non-finite observation");
    return z;
}

ModelJacobians ParametricModel::fd_jacobians(const Vec& x, const Vec& u, const Vec& theta) const {
    check_dims(x, u, theta);
    ModelJacobians J;
    J.fx.resize(dims_.nx, dims_.nx);
    J.ftheta.resize(dims_.nx, dims_.ntheta);
    J.hx.resize(dims_.nz, dims_.nx);
    for (Index i = 0; i < dims_.nx; ++i) {
        const double h = fd_step(x(i));
        Vec xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        J.fx.col(i) = (step(xp, u, theta) - step(xm, u, theta)) / (xp(i) - xm(i));
        J.hx.col(i) = (observe(xp) - observe(xm)) / (xp(i) - xm(i));
    }
    for (Index i = 0; i < dims_.ntheta; ++i) {
        const double h = fd_step(theta(i));
        Vec tp = theta, tm = theta;
        tp(i) += h;
        tm(i) -= h;
        J.ftheta.col(i) = (step(x, u, tp) - step(x, u, tm)) / (tp(i) - tm(i));
    }
    return J;
}

ModelJacobians ParametricModel::jacobians(const Vec& x, const Vec& u, const Vec& theta) const {
    check_dims(x, u, theta);
    ModelJacobians J;
    if (has_analytic_jacobians()) {
        J.fx = jac_.dfdx(x, u, theta);
        J.ftheta = jac_.dfdtheta(x, u, theta);
        J.hx = jac_.dhdx(x);
    } else {
        ModelJacobians fd = fd_jacobians(x, u, theta);
        J.fx = jac_.dfdx ? jac_.dfdx(x, u, theta) : fd.fx;
        J.ftheta = jac_.dfdtheta ? jac_.dfdtheta(x, u, theta) : fd.ftheta;
        J.hx = jac_.dhdx ? jac_.dhdx(x) : fd.hx;
    }
    if (!J.fx.allFinite() || !J.ftheta.allFinite() || !J.hx.allFinite())
        throw EscapeError(-1, "non-finite Jacobian at x=" + describe(x));
    return J;
}

ParametricModel logistic_map() {
    Dimensions d{1, 0, 1, 1};
    auto f = [](const Vec& x, const Vec&, const Vec& th) {
        Vec r(1);
        r(0) = th(0) * x(0) * (1.0 - x(0));
        return r;
    };
    auto h = [](const Vec& x) { return x; };
    ParametricModel::Analytic jac;
    jac.dfdx = [](const Vec& x, const Vec&, const Vec& th) {
        Mat J(1, 1);
        J(0, 0) = th(0) * (1.0 - 2.0 * x(0));
        return J;
    };
    jac.dfdtheta = [](const Vec& x, const Vec&, const Vec&) {
        Mat J(1, 1);
        J(0, 0) = x(0) * (1.0 - x(0));
        return J;
    };
    jac.dhdx = [](const Vec&) { return Mat::Identity(1, 1); };
    return ParametricModel("logistic", d, f, h, jac);
}

ParametricModel cascaded_tanks(double Ts) {
    if (!(Ts > 0)) throw ConfigError("tanks: sampling time must be positive");
    Dimensions d{2, 1, 1, 4};
    // sqrt is guarded: negative levels read as empty tanks.
    auto f = [Ts](const Vec& x, const Vec& u, const Vec& k) {
        const double s1 = std::sqrt(std::max(x(0), 0.0));
        const double s2 = std::sqrt(std::max(x(1), 0.0));
        Vec r(2);
        r(0) = x(0) + Ts * (-k(0) * s1 + k(3) * u(0));
        r(1) = x(1) + Ts * (k(1) * s1 - k(2) * s2);
        return r;
    };
    auto h = [](const Vec& x) {
        Vec z(1);
        z(0) = x(1);
        return z;
    };
    auto dsqrt = [](double v) { return v > 0.0 ? 0.5 / std::sqrt(v) : 0.0; };
    ParametricModel::Analytic jac;
    jac.dfdx = [Ts, dsqrt](const Vec& x, const Vec&, const Vec& k) {
        Mat J = Mat::Identity(2, 2);
        J(0, 0) -= Ts * k(0) * dsqrt(x(0));
        J(1, 0) = Ts * k(1) * dsqrt(x(0));
        J(1, 1) -= Ts * k(2) * dsqrt(x(1));
        return J;
    };
    jac.dfdtheta = [Ts](const Vec& x, const Vec& u, const Vec&) {
        const double s1 = std::sqrt(std::max(x(0), 0.0));
        const double s2 = std::sqrt(std::max(x(1), 0.0));
        Mat J = Mat::Zero(2, 4);
        J(0, 0) = -Ts * s1;
        J(0, 3) = Ts * u(0);
        J(1, 1) = Ts * s1;
        J(1, 2) = -Ts * s2;
        return J;
    };
    jac.dhdx = [](const Vec&) {
        Mat J(1, 2);
        J << 0.0, 1.0;
        return J;
    };
    return ParametricModel("tanks", d, f, h, jac);
}

ParametricModel linear_state_space(Index nx, Index nu, const Mat& C_in) {
    const Mat C = C_in.size() ? C_in : Mat(Mat::Identity(nx, nx));
    if (C.cols() != nx) throw ConfigError("linear model: C must have nx columns");
    Dimensions d{nx, nu, C.rows(), nx * nx + nx * nu};
    auto f = [nx, nu](const Vec& x, const Vec& u, const Vec& th) {
        Eigen::Map<const Mat> A(th.data(), nx, nx);
        Eigen::Map<const Mat> B(th.data() + nx * nx, nx, nu);
        Vec r = A * x;
        if (nu > 0) r += B * u;
        return r;
    };
    auto h = [C](const Vec& x) { return Vec(C * x); };
    ParametricModel::Analytic jac;
    jac.dfdx = [nx](const Vec&, const Vec&, const Vec& th) {
        return Mat(Eigen::Map<const Mat>(th.data(), nx, nx));
    };
    jac.dfdtheta = [nx, nu](const Vec& x, const Vec& u, const Vec&) {
        Mat J = Mat::Zero(nx, nx * nx + nx * nu);
        for (Index j = 0; j < nx; ++j)
            for (Index r = 0; r < nx; ++r) J(r, r + j * nx) = x(j);
        for (Index j = 0; j < nu; ++j)
            for (Index r = 0; r < nx; ++r) J(r, nx * nx + r + j * nx) = u(j);
        return J;
    };
    jac.dhdx = [C](const Vec&) { return C; };
    return ParametricModel("linear", d, f, h, jac);
}

void Dataset::validate(const Dimensions& dims) const {
    if (u.rows() != dims.nu) throw ConfigError("dataset: input rows do not match nu");
    if (z.rows() != dims.nz) throw ConfigError("dataset: output rows do not match nz");
    if (u.cols() != z.cols()) throw ConfigError("dataset: inputs and outputs must share the horizon");
    if (z.cols() < 1) throw ConfigError("dataset: horizon must be at least 1");
    if (!observed.empty() && static_cast<Index>(observed.size()) != z.cols())
        throw ConfigError("dataset: mask length does not match horizon");
}

Dataset Dataset::slice(Index begin, Index count) const {
    if (begin < 0 || count < 0 || begin + count > horizon()) throw ConfigError("dataset: slice out of range");
    Dataset d;
    d.u = u.middleCols(begin, count);
    d.z = z.middleCols(begin, count);
    if (!observed.empty())
        d.observed.assign(observed.begin() + begin, observed.begin() + begin + count);
    d.Ts = Ts;
    return d;
}

Trajectory simulate(const ParametricModel& model, const Vec& x0, const Vec& theta, const Mat& inputs,
                    const BlackBox* delta, const SimulationOptions& opts) {
    const Dimensions& d = model.dims();
    if (inputs.rows() != d.nu) throw ConfigError("simulate: input rows do not match nu");
    if (x0.size() != d.nx) throw ConfigError("simulate: x0 dimension mismatch");
    if (delta && (delta->nx() != d.nx || delta->nu() != d.nu))
        throw ConfigError("simulate: black-box dimensions do not match the model");
    const Index T = inputs.cols();
    Trajectory tr;
    tr.horizon = T;
    tr.x = Mat::Constant(d.nx, T, std::numeric_limits<double>::quiet_NaN());
    tr.z = Mat::Constant(d.nz, T, std::numeric_limits<double>::quiet_NaN());
    Vec x = x0;
    for (Index k = 0; k < T; ++k) {
        const bool bad = !x.allFinite() || x.norm() > opts.state_bound;
        if (bad) {
            tr.escaped = true;
            tr.escape_step = static_cast<long>(k);
            if (opts.throw_on_escape)
                throw EscapeError(tr.escape_step, "state escaped at step " + std::to_string(k));
            return tr;
        }
        tr.x.col(k) = x;
        tr.z.col(k) = model.observe(x);
        if (k + 1 == T) break;
        const Vec u = inputs.col(k);
        try {
            Vec next = model.step(x, u, theta);
            if (delta) next += eval_delta(*delta, x, u);
            x = std::move(next);
        } catch (const EscapeError&) {
            x = Vec::Constant(d.nx, std::numeric_limits<double>::infinity());
        }
    }
    return tr;
}

Dataset read_dataset_csv(std::istream& in, Index nu, Index nz, double Ts) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("dataset csv: empty input");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    const std::size_t ncol = static_cast<std::size_t>(1 + nu + nz);
    if (header.size() != ncol || header[0] != "k")
        throw ConfigError("dataset csv: expected header k,u_1..u_nu,z_1..z_nz");
    std::vector<std::vector<double>> rows;
    std::vector<unsigned char> mask;
    bool any_missing = false;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (cells.size() != ncol) throw ConfigError("dataset csv: wrong column count on line " + std::to_string(lineno));
        std::vector<double> row(ncol);
        bool missing = false;
        for (std::size_t c = 0; c < ncol; ++c) {
            const std::string& s = cells[c];
            if (s.empty() || s == "nan" || s == "NaN") {
                if (c <= static_cast<std::size_t>(nu)) throw ConfigError("dataset csv: missing index or input on line " + std::to_string(lineno));
                missing = true;
                row[c] = 0.0;
                continue;
            }
            try {
                std::size_t pos = 0;
                row[c] = std::stod(s, &pos);
                if (pos != s.size()) throw std::invalid_argument(s);
            } catch (const std::exception&) {
                throw ConfigError("dataset csv: bad number '" + s + "' on line " + std::to_string(lineno));
            }
        }
        any_missing = any_missing || missing;
        mask.push_back(missing ? 0 : 1);
        rows.push_back(std::move(row));
    }
    Dataset d;
    const Index T = static_cast<Index>(rows.size());
    d.u.resize(nu, T);
    d.z.resize(nz, T);
    for (Index k = 0; k < T; ++k) {
        const auto& r = rows[static_cast<std::size_t>(k)];
        for (Index i = 0; i < nu; ++i) d.u(i, k) = r[static_cast<std::size_t>(1 + i)];
        for (Index i = 0; i < nz; ++i) d.z(i, k) = r[static_cast<std::size_t>(1 + nu + i)];
    }
    if (any_missing) d.observed = std::move(mask);
    d.Ts = Ts;
    return d;
}

Dataset read_dataset_csv(const std::string& path, Index nu, Index nz, double Ts) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset file: " + path);
    return read_dataset_csv(in, nu, nz, Ts);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
    out << "k";
    for (Index i = 0; i < data.u.rows(); ++i) out << ",u_" << (i + 1);
    for (Index i = 0; i < data.z.rows(); ++i) out << ",z_" << (i + 1);
    out << "\n" << std::setprecision(17);
    for (Index k = 0; k < data.horizon(); ++k) {
        out << k;
        for (Index i = 0; i < data.u.rows(); ++i) out << "," << data.u(i, k);
        for (Index i = 0; i < data.z.rows(); ++i) {
            if (data.is_observed(k))
                out << "," << data.z(i, k);
            else
                out << ",nan";
        }
        out << "\n";
    }
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write dataset file: " + path);
    write_dataset_csv(out, data);
}

void write_trajectory_csv(std::ostream& out, const Mat& inputs, const Trajectory& traj) {
    Dataset d;
    d.u = inputs.leftCols(traj.horizon);
    d.z = traj.z;
    write_dataset_csv(out, d);
}

}  // namespace greybox
