#pragma once

#include <stdexcept>
#include <string>

namespace rpf {

// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated precondition (dimension mismatch, argument out of domain, ...).
struct ContractError : Error {
  using Error::Error;
};

// log_map / distance derivatives requested at or beyond the cut locus.
struct CutLocusError : Error {
  using Error::Error;
};

// Malformed or inconsistent configuration; carries the offending field path.
struct ConfigError : Error {
  explicit ConfigError(const std::string& field_path, const std::string& what)
      : Error(field_path + ": " + what), field(field_path) {}
  std::string field;
};

// Requested feature not implemented for the given architecture/manifold.
struct UnsupportedError : Error {
  using Error::Error;
};

// Flow Jacobian numerically singular.
struct DegenerateFlowError : Error {
  using Error::Error;
};

// Implicit linear system indefinite or singular; carries the smallest
// Hessian eigenvalue observed.
struct ImplicitSolveError : Error {
  explicit ImplicitSolveError(const std::string& what, double min_eig_)
      : Error(what), min_eig(min_eig_) {}
  double min_eig;
};

// Training loop in a bad state (non-finite gradient, too many failed solves).
struct TrainingHealthError : Error {
  explicit TrainingHealthError(const std::string& what,
                               const std::string& segment_ = "")
      : Error(what), segment(segment_) {}
  std::string segment;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace rpf
