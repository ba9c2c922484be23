#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace causal_lens {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Failure classes raised by the library. The CLI maps each to an exit code.
enum class ErrorKind {
  domain,            // point outside chart box, boundary point where interior needed
  zero_vector,
  classification,    // wrong causal type for the operation
  model_definition,  // model rejected at construction
  escape,            // trajectory left the chart box
  stiffness,         // step-size underflow
  non_exiting,       // no boundary crossing within the affine budget
  conjugate_point,
  no_apex,           // optical equation solution left the manifold before blowing up
  budget,
  underdetermined,
  inconsistent_fan,
  config,
  parse,
  data_inconsistency,
  not_well_defined,
  conflict,
  io,
  hypothesis,        // model violates a structural hypothesis (refocusing, conjugate points)
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::zero_vector: return "zero-vector";
    case ErrorKind::classification: return "classification";
    case ErrorKind::model_definition: return "model-definition";
    case ErrorKind::escape: return "escape";
    case ErrorKind::stiffness: return "stiffness";
    case ErrorKind::non_exiting: return "non-exiting";
    case ErrorKind::conjugate_point: return "conjugate-point";
    case ErrorKind::no_apex: return "no-apex";
    case ErrorKind::budget: return "budget";
    case ErrorKind::underdetermined: return "underdetermined";
    case ErrorKind::inconsistent_fan: return "inconsistent-fan";
    case ErrorKind::config: return "config";
    case ErrorKind::parse: return "parse";
    case ErrorKind::data_inconsistency: return "data-inconsistency";
    case ErrorKind::not_well_defined: return "not-well-defined";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::io: return "io";
    case ErrorKind::hypothesis: return "hypothesis";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

enum class Causal { timelike, lightlike, spacelike };
enum class TimeDir { future, past };

inline const char* to_string(Causal c) {
  switch (c) {
    case Causal::timelike: return "timelike";
    case Causal::lightlike: return "lightlike";
    case Causal::spacelike: return "spacelike";
  }
  return "?";
}

inline const char* to_string(TimeDir d) { return d == TimeDir::future ? "future" : "past"; }

/// A tangent vector together with its base point, both in chart coordinates.
struct PointVector {
  Vec x;
  Vec v;
};

/// Element of the tangent bundle restricted to the boundary.
struct BoundaryVector {
  PointVector pv;
  Causal causal = Causal::lightlike;
  TimeDir direction = TimeDir::future;
  bool transversal = true;
};

/// Default tolerances shared across modules.
struct Tolerances {
  double classification = 1e-9;  // relative band |g(v,v)| <= tol * |v|^2 for lightlike
  double boundary = 1e-9;        // |F| on the boundary, chart units
  double transversality = 1e-6;  // relative margin on dF(v)
  double match = 1e-6;           // two geodesics "intersect"
  double vector_match = 1e-5;    // base + normalized direction matching of boundary vectors
  double import_lightlike = 1e-6;  // relative null-check band when reading files
};

}  // namespace causal_lens
