#pragma once

#include "greybox/common.hpp"

#include <functional>
#include <iosfwd>
#include <vector>

namespace greybox {

class BlackBox;

struct Dimensions {
    Index nx = 0;
    Index nu = 0;
    Index nz = 0;
    Index ntheta = 0;
};

struct ModelJacobians {
    Mat fx;      ///< nx x nx
    Mat ftheta;  ///< nx x ntheta
    Mat hx;      ///< nz x nx
};

/// Known physical part x' = f(x, u; theta), z = h(x). Immutable once built.
class ParametricModel {
public:
    using StateMap = std::function<Vec(const Vec& x, const Vec& u, const Vec& theta)>;
    using ObsMap = std::function<Vec(const Vec& x)>;
    using StateJac = std::function<Mat(const Vec& x, const Vec& u, const Vec& theta)>;
    using ObsJac = std::function<Mat(const Vec& x)>;

    struct Analytic {
        StateJac dfdx;
        StateJac dfdtheta;
        ObsJac dhdx;
    };

    ParametricModel(std::string name, Dimensions dims, StateMap f, ObsMap h, Analytic jac = {});

    const std::string& name() const { return name_; }
    const Dimensions& dims() const { return dims_; }
    bool has_analytic_jacobians() const;

    Vec step(const Vec& x, const Vec& u, const Vec& theta) const;
    Vec observe(const Vec& x) const;

    /// Analytic suppliers where present, central differences otherwise.
    ModelJacobians jacobians(const Vec& x, const Vec& u, const Vec& theta) const;
    ModelJacobians fd_jacobians(const Vec& x, const Vec& u, const Vec& theta) const;

private:
    void check_dims(const Vec& x, const Vec& u, const Vec& theta) const;

    std::string name_;
    Dimensions dims_;
    StateMap f_;
    ObsMap h_;
    Analytic jac_;
};

/// x' = theta * x * (1 - x), z = x.
ParametricModel logistic_map();

/// Forward-Euler cascaded tanks, theta = (k1, k2, k3, k4), z = x2.
ParametricModel cascaded_tanks(double Ts);

/// x' = A x + B u, z = C x with theta = [vec(A); vec(B)] (column-major). Empty C means identity.
ParametricModel linear_state_space(Index nx, Index nu, const Mat& C);

struct SimulationOptions {
    double state_bound = 1e6;
    bool throw_on_escape = true;
};

/// States and observations for k = 0..T-1, stored column-wise.
struct Trajectory {
    Mat x;
    Mat z;
    Index horizon = 0;
    bool escaped = false;
    long escape_step = -1;
};

/// Inputs u_k and measurements z_k for k = 0..T-1, stored column-wise.
struct Dataset {
    Mat u;  ///< nu x T
    Mat z;  ///< nz x T
    std::vector<unsigned char> observed;  ///< empty means every sample observed
    double Ts = 1.0;

    Index horizon() const { return z.cols(); }
    bool is_observed(Index k) const { return observed.empty() || observed[static_cast<std::size_t>(k)] != 0; }
    void validate(const Dimensions& dims) const;
    Dataset slice(Index begin, Index count) const;
};

Trajectory simulate(const ParametricModel& model, const Vec& x0, const Vec& theta, const Mat& inputs,
                    const BlackBox* delta = nullptr, const SimulationOptions& opts = {});

/// Header `k,u_1..u_nu,z_1..z_nz`; `nan` or empty marks a missing measurement.
Dataset read_dataset_csv(std::istream& in, Index nu, Index nz, double Ts = 1.0);
Dataset read_dataset_csv(const std::string& path, Index nu, Index nz, double Ts = 1.0);
void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::string& path, const Dataset& data);
void write_trajectory_csv(std::ostream& out, const Mat& inputs, const Trajectory& traj);

}  // namespace greybox
