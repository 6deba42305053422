#include "greybox/blackbox.hpp"

#include <algorithm>
#include <cmath>

namespace greybox {

namespace {

double sigmoid(double a) {
    if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

constexpr double kSoftplusSharpness = 10.0;
constexpr double kHyperbolicClamp = 30.0;

}  // namespace

BasisFunction basis_by_name(const std::string& name) {
    if (name == "sigmoid")
        return {name, sigmoid, [](double a) { const double s = sigmoid(a); return s * (1.0 - s); }};
    if (name == "tanh")
        return {name, [](double a) { return std::tanh(a); },
                [](double a) { const double t = std::tanh(a); return 1.0 - t * t; }};
    if (name == "sinh")
        return {name, [](double a) { return std::sinh(a); }, [](double a) { return std::cosh(a); }, kHyperbolicClamp};
    if (name == "cosh")
        return {name, [](double a) { return std::cosh(a); }, [](double a) { return std::sinh(a); }, kHyperbolicClamp};
    if (name == "sin") return {name, [](double a) { return std::sin(a); }, [](double a) { return std::cos(a); }};
    if (name == "cos") return {name, [](double a) { return std::cos(a); }, [](double a) { return -std::sin(a); }};
    if (name == "softplus")
        return {name,
                [](double a) {
                    const double s = kSoftplusSharpness * a;
                    return (std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s)))) / kSoftplusSharpness;
                },
                [](double a) { return sigmoid(kSoftplusSharpness * a); }};
    if (name == "linear") return {name, [](double a) { return a; }, [](double) { return 1.0; }};
    throw ConfigError("unknown basis function: " + name);
}

BasisDictionary default_dictionary() {
    return BasisDictionary::from_names({"sigmoid", "tanh", "sinh", "cosh", "sin", "cos", "softplus", "linear"});
}

std::vector<std::string> BasisDictionary::names() const {
    std::vector<std::string> out;
    out.reserve(fns_.size());
    for (const auto& f : fns_) out.push_back(f.name);
    return out;
}

BasisDictionary BasisDictionary::from_names(const std::vector<std::string>& names) {
    if (names.empty()) throw ConfigError("basis dictionary must not be empty");
    std::vector<BasisFunction> fns;
    for (const auto& n : names) fns.push_back(basis_by_name(n));
    return BasisDictionary(std::move(fns));
}

BlackBox::BlackBox(Index nx, Index nu, BasisDictionary dict) : nx_(nx), nu_(nu), dict_(std::move(dict)) {
    if (nx <= 0 || nu < 0) throw ConfigError("black box: invalid dimensions");
    if (dict_.size() == 0) throw ConfigError("black box: empty dictionary");
    const Index mm = dict_.size();
    omega = Mat::Zero(nx, mm);
    w = Mat::Ones(nx + nu, nx * mm);
    b = Mat::Zero(nx, mm);
}

Index BlackBox::n_weights() const { return nx_ * m() + (nx_ + nu_) * nx_ * m() + nx_ * m(); }

Vec BlackBox::pack() const {
    Vec v(n_weights());
    Index o = 0;
    v.segment(o, omega.size()) = Eigen::Map<const Vec>(omega.data(), omega.size());
    o += omega.size();
    v.segment(o, w.size()) = Eigen::Map<const Vec>(w.data(), w.size());
    o += w.size();
    v.segment(o, b.size()) = Eigen::Map<const Vec>(b.data(), b.size());
    return v;
}

void BlackBox::unpack(const Vec& weights) {
    if (weights.size() != n_weights()) throw ConfigError("black box: weight vector has wrong length");
    Index o = 0;
    omega = Eigen::Map<const Mat>(weights.data() + o, nx_, m());
    o += omega.size();
    w = Eigen::Map<const Mat>(weights.data() + o, nx_ + nu_, nx_ * m());
    o += w.size();
    b = Eigen::Map<const Mat>(weights.data() + o, nx_, m());
}

namespace {

Vec stacked(const BlackBox& bb, const Vec& x, const Vec& u) {
    if (x.size() != bb.nx() || u.size() != bb.nu()) throw ConfigError("black box: argument dimensions do not match");
    Vec v(bb.nx() + bb.nu());
    v << x, u;
    return v;
}

// Raw activations, nx x m.
Mat activations(const BlackBox& bb, const Vec& v) {
    const Index m = bb.m();
    Mat a(bb.nx(), m);
    const Vec wv = bb.w.transpose() * v;
    for (Index i = 0; i < bb.nx(); ++i)
        for (Index j = 0; j < m; ++j) a(i, j) = wv(i * m + j) + bb.b(i, j);
    return a;
}

}  // namespace

Vec eval_delta(const BlackBox& bb, const Vec& x, const Vec& u) {
    const Mat a = activations(bb, stacked(bb, x, u));
    Vec d = Vec::Zero(bb.nx());
    for (Index j = 0; j < bb.m(); ++j) {
        const BasisFunction& phi = bb.dictionary()[j];
        for (Index i = 0; i < bb.nx(); ++i) {
            const double arg = std::clamp(a(i, j), -phi.clamp, phi.clamp);
            d(i) += bb.omega(i, j) * phi.value(arg);
        }
    }
    return d;
}

DeltaJacobians delta_jacobians(const BlackBox& bb, const Vec& x, const Vec& u) {
    const Vec v = stacked(bb, x, u);
    const Mat a = activations(bb, v);
    const Index nx = bb.nx(), m = bb.m(), nv = v.size();
    const Index off_w = nx * m;
    const Index off_b = off_w + nv * nx * m;
    DeltaJacobians J;
    J.dx = Mat::Zero(nx, nx);
    J.dw = Mat::Zero(nx, bb.n_weights());
    for (Index j = 0; j < m; ++j) {
        const BasisFunction& phi = bb.dictionary()[j];
        for (Index i = 0; i < nx; ++i) {
            const bool clamped = std::abs(a(i, j)) > phi.clamp;
            const double arg = std::clamp(a(i, j), -phi.clamp, phi.clamp);
            const double val = phi.value(arg);
            const double slope = clamped ? 0.0 : phi.derivative(arg);
            const double g = bb.omega(i, j) * slope;
            const Index wcol = i * m + j;
            J.dw(i, i + j * nx) = val;
            for (Index r = 0; r < nv; ++r) J.dw(i, off_w + r + wcol * nv) = g * v(r);
            J.dw(i, off_b + i + j * nx) = g;
            for (Index r = 0; r < nx; ++r) J.dx(i, r) += g * bb.w(r, wcol);
        }
    }
    return J;
}

Index clamp_count(const BlackBox& bb, const Vec& x, const Vec& u) {
    const Mat a = activations(bb, stacked(bb, x, u));
    Index n = 0;
    for (Index j = 0; j < bb.m(); ++j)
        for (Index i = 0; i < bb.nx(); ++i)
            if (std::abs(a(i, j)) > bb.dictionary()[j].clamp) ++n;
    return n;
}

Mat hard_threshold(const Mat& omega, double tau) {
    if (tau < 0) throw ConfigError("hard_threshold: tau must be non-negative");
    Mat out = omega;
    for (Index i = 0; i < out.size(); ++i)
        if (std::abs(out.data()[i]) <= tau) out.data()[i] = 0.0;
    return out;
}

}  // namespace greybox
