#pragma once

#include <stdexcept>
#include <string>

namespace switchpred {

// Input value lies outside the declared operating domain (e.g. an input
// signal leaving its admissible interval).
class DomainViolation : public std::domain_error {
 public:
  explicit DomainViolation(const std::string& what) : std::domain_error(what) {}
};

// A prediction was requested from a model that has never been fitted.
class UntrainedModelError : public std::logic_error {
 public:
  explicit UntrainedModelError(const std::string& what) : std::logic_error(what) {}
};

// A least-squares problem was numerically rank deficient and no
// regularization was requested.
class IllConditionedError : public std::runtime_error {
 public:
  explicit IllConditionedError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace switchpred
