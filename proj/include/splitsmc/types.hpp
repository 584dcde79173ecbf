// Common dense types and error taxonomy.
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace splitsmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Bad arguments: wrong sizes, out-of-range counts, malformed configs.
struct InvalidInput : std::invalid_argument {
  explicit InvalidInput(const std::string& msg) : std::invalid_argument(msg) {}
};

// A covariance (or covariance block) that should be positive definite is not.
struct NumericalDegeneracy : std::runtime_error {
  explicit NumericalDegeneracy(const std::string& msg) : std::runtime_error(msg) {}
};

// A quadratic log-policy whose twisted precision C^-1 - 2P is not positive definite.
struct PolicyDegeneracy : std::runtime_error {
  PolicyDegeneracy(const std::string& msg, int step_index)
      : std::runtime_error(msg), step(step_index) {}
  int step = -1;
};

// Every particle weight vanished at one step of a particle filter.
struct ParticleCollapse : std::runtime_error {
  ParticleCollapse(const std::string& msg, int step_index)
      : std::runtime_error(msg), step(step_index) {}
  int step = -1;
};

// A flow inverse was evaluated outside its domain of definition.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Scheme/model combination that cannot provide the requested density.
struct UnsupportedScheme : std::runtime_error {
  explicit UnsupportedScheme(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace splitsmc
