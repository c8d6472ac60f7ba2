#pragma once

#include <stdexcept>
#include <string>

namespace pepa {

// Base class for every domain error raised by the library. The CLI maps
// subclasses onto exit codes: model/assumption failures -> 2,
// solver non-convergence -> 3, I/O and schema problems -> 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidProbabilities : public Error {
 public:
  using Error::Error;
};

// Raised when no strictly positive martingale measure exists.
class ArbitrageDetected : public Error {
 public:
  using Error::Error;
};

class InfeasiblePolytope : public Error {
 public:
  using Error::Error;
};

// Power-utility wealth falls outside the utility domain for every strategy.
class DomainViolation : public Error {
 public:
  using Error::Error;
};

class NonConvergence : public Error {
 public:
  using Error::Error;
};

// Intersection of the agents' martingale polytopes is empty.
class EmptyIntersection : public Error {
 public:
  using Error::Error;
};

// Demand iterates diverge: the quoted price is outside the range of
// marginal prices the agent can ever quote.
class PriceOutsideRange : public Error {
 public:
  using Error::Error;
};

// A structural precondition of the equilibrium solver failed; the message
// names the condition and carries a witness when one exists.
class AssumptionViolated : public Error {
 public:
  using Error::Error;
};

class GridTooCoarse : public Error {
 public:
  using Error::Error;
};

class MinimumOnBoundary : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  ValidationError(const std::string& field, const std::string& msg)
      : Error(field + ": " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace pepa
