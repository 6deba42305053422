#pragma once

#include "greybox/common.hpp"

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace greybox {

/// Scalar basis function. Arguments are clamped to [-clamp, clamp] when clamp is finite.
struct BasisFunction {
    std::string name;
    std::function<double(double)> value;
    std::function<double(double)> derivative;
    double clamp = std::numeric_limits<double>::infinity();
};

class BasisDictionary {
public:
    BasisDictionary() = default;
    explicit BasisDictionary(std::vector<BasisFunction> fns) : fns_(std::move(fns)) {}

    Index size() const { return static_cast<Index>(fns_.size()); }
    const BasisFunction& operator[](Index j) const { return fns_[static_cast<std::size_t>(j)]; }
    std::vector<std::string> names() const;

    /// Builds a dictionary from known names (see basis_by_name).
    static BasisDictionary from_names(const std::vector<std::string>& names);

private:
    std::vector<BasisFunction> fns_;
};

/// sigmoid, tanh, sinh, cosh, sin, cos, softplus (sharpness 10), linear.
BasisDictionary default_dictionary();
BasisFunction basis_by_name(const std::string& name);

/// delta_i = sum_j Omega(i,j) phi_j(W^(i)^T [x; u] + B(i,j)), with W^(i) the
/// columns i*m .. i*m+m-1 of W.
class BlackBox {
public:
    BlackBox() = default;
    BlackBox(Index nx, Index nu, BasisDictionary dict);

    Index nx() const { return nx_; }
    Index nu() const { return nu_; }
    Index m() const { return dict_.size(); }
    const BasisDictionary& dictionary() const { return dict_; }

    /// Number of entries of (Omega, W, B).
    Index n_weights() const;
    Index n_omega() const { return nx_ * m(); }

    /// vec(Omega), vec(W), vec(B), column-major.
    Vec pack() const;
    void unpack(const Vec& weights);

    Mat omega;
    Mat w;
    Mat b;

private:
    Index nx_ = 0;
    Index nu_ = 0;
    BasisDictionary dict_;
};

Vec eval_delta(const BlackBox& bb, const Vec& x, const Vec& u);

struct DeltaJacobians {
    Mat dx;      ///< nx x nx
    Mat dw;      ///< nx x n_weights, columns ordered vec(Omega), vec(W), vec(B)
};

DeltaJacobians delta_jacobians(const BlackBox& bb, const Vec& x, const Vec& u);

/// Count of basis arguments that were clamped at (x, u).
Index clamp_count(const BlackBox& bb, const Vec& x, const Vec& u);

/// Zeroes every entry with |value| <= tau.
Mat hard_threshold(const Mat& omega, double tau);

}  // namespace greybox
