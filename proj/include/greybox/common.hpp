#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace greybox {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, dimensions or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite or over-bound state. step() is -1 when the time index is unknown.
class EscapeError : public Error {
public:
    EscapeError(long step, const std::string& what) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

/// Optimization aborted after too many consecutive escape backoffs.
class EscapeAbortError : public EscapeError {
public:
    using EscapeError::EscapeError;
};

class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Certificate declined: norm constraint inactive or degenerate support.
class NotActiveError : public Error {
public:
    using Error::Error;
};

class CombinatorialBudgetExceeded : public Error {
public:
    using Error::Error;
};

class NotIdentifiableError : public Error {
public:
    using Error::Error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace greybox
