#pragma once

#include <stdexcept>
#include <string>

namespace afcomb {

// Base for all library errors. `validation` distinguishes bad input
// (CLI exit code 2) from runtime/numeric failure (exit code 3).
class Error : public std::runtime_error {
public:
  Error(const std::string& msg, bool validation = false)
      : std::runtime_error(msg), validation_(validation) {}
  bool is_validation() const { return validation_; }

private:
  bool validation_;
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg, true) {}
};

// A cell could not be parsed as a number (includes empty / NA cells).
class NonNumericCell : public Error {
public:
  explicit NonNumericCell(const std::string& msg) : Error(msg, true) {}
};

// Sample id present in one input file but absent in another.
class MissingSample : public Error {
public:
  explicit MissingSample(const std::string& msg) : Error(msg, true) {}
};

// Count-kind phenotype column holds a negative or fractional value.
class KindViolation : public Error {
public:
  explicit KindViolation(const std::string& msg) : Error(msg, true) {}
};

// K exceeds the hard cap of 15 (weight enumeration is 2^K - 1).
class TooManyPhenotypes : public Error {
public:
  explicit TooManyPhenotypes(const std::string& msg) : Error(msg, true) {}
};

// Shape or invariant violation not covered by a more specific class.
class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& msg) : Error(msg, true) {}
};

// Design matrix is rank deficient (collinear covariates).
class RankDeficient : public Error {
public:
  explicit RankDeficient(const std::string& msg) : Error(msg) {}
};

// Pooled null has zero spread for some weight vector (AFz cannot standardize).
class DegenerateNull : public Error {
public:
  explicit DegenerateNull(const std::string& msg) : Error(msg) {}
};

// Bootstrap resample degenerated (constant covariate column) past the retry cap.
class DegenerateBootstrap : public Error {
public:
  explicit DegenerateBootstrap(const std::string& msg) : Error(msg) {}
};

}  // namespace afcomb
