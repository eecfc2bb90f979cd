#pragma once

// Input-domain partitioning: per-input interval partitions, Cartesian
// products of them across inputs, and the cell-lookup that maps an input
// vector to the subset whose local model should be used.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "switchpred/errors.hpp"
#include "switchpred/interval.hpp"

namespace switchpred {

// Partition of one input's admissible interval [lo, hi] into
// breakpoints.size() + 1 cells. Cells are half-open [b_{c-1}, b_c) except
// the last, which is closed at the domain's upper end; a value equal to a
// breakpoint therefore belongs to the cell above it.
class PartitionPattern {
 public:
  PartitionPattern(Interval domain, std::vector<double> breakpoints)
      : domain_(domain), breakpoints_(std::move(breakpoints)) {
    domain_.validate();
    double prev = domain_.lo;
    for (double b : breakpoints_) {
      if (!(b > prev) || !(b < domain_.hi)) {
        throw std::invalid_argument(
            "PartitionPattern: breakpoints must be strictly increasing and strictly inside (" +
            std::to_string(domain_.lo) + ", " + std::to_string(domain_.hi) + ")");
      }
      prev = b;
    }
  }

  const Interval& domain() const { return domain_; }
  const std::vector<double>& breakpoints() const { return breakpoints_; }
  std::size_t cells() const { return breakpoints_.size() + 1; }

  // Index of the cell containing x; x must lie in the domain.
  std::size_t cell_of(double x) const {
    if (!domain_.contains(x)) {
      throw DomainViolation("PartitionPattern: value " + std::to_string(x) +
                            " outside domain [" + std::to_string(domain_.lo) + ", " +
                            std::to_string(domain_.hi) + "]");
    }
    std::size_t c = 0;
    for (double b : breakpoints_) {
      if (x >= b) ++c; else break;
    }
    return c;
  }

  Interval cell_bounds(std::size_t cell) const {
    if (cell >= cells()) throw std::invalid_argument("PartitionPattern: cell index out of range");
    const double lo = (cell == 0) ? domain_.lo : breakpoints_[cell - 1];
    const double hi = (cell == breakpoints_.size()) ? domain_.hi : breakpoints_[cell];
    return Interval{lo, hi};
  }

 private:
  Interval domain_;
  std::vector<double> breakpoints_;
};

// One partition pattern per input; the induced subsets of the input box are
// the Cartesian products of one cell per input.
class PartitionProfile {
 public:
  explicit PartitionProfile(std::vector<PartitionPattern> patterns)
      : patterns_(std::move(patterns)) {
    if (patterns_.empty()) {
      throw std::invalid_argument("PartitionProfile: need at least one input pattern");
    }
  }

  const std::vector<PartitionPattern>& patterns() const { return patterns_; }
  std::size_t input_count() const { return patterns_.size(); }

  std::size_t subset_count() const {
    std::size_t n = 1;
    for (const auto& p : patterns_) n *= p.cells();
    return n;
  }

 private:
  std::vector<PartitionPattern> patterns_;
};

// Identifier of one subset of one profile: the profile's index in the menu,
// the per-input cell multi-index, and its flat lexicographic rank (first
// input most significant, last input varying fastest).
struct SubsetId {
  std::size_t profile = 0;
  std::vector<std::size_t> cell;
  std::size_t flat = 0;
};

inline std::size_t flatten_cell_index(const PartitionProfile& profile,
                                      const std::vector<std::size_t>& cell) {
  if (cell.size() != profile.input_count()) {
    throw std::invalid_argument("flatten_cell_index: multi-index size mismatch");
  }
  std::size_t flat = 0;
  for (std::size_t i = 0; i < cell.size(); ++i) {
    const std::size_t cells_i = profile.patterns()[i].cells();
    if (cell[i] >= cells_i) {
      throw std::invalid_argument("flatten_cell_index: cell index out of range for input " +
                                  std::to_string(i));
    }
    flat = flat * cells_i + cell[i];
  }
  return flat;
}

// All subsets of a profile in lexicographic order of the multi-index, so
// that the flat index of the k-th element is k. For two inputs with two
// cells each the order is (0,0), (0,1), (1,0), (1,1).
inline std::vector<SubsetId> enumerate_subsets(const PartitionProfile& profile,
                                               std::size_t profile_id = 0) {
  std::vector<SubsetId> out;
  out.reserve(profile.subset_count());
  std::vector<std::size_t> cell(profile.input_count(), 0);
  for (std::size_t flat = 0; flat < profile.subset_count(); ++flat) {
    out.push_back(SubsetId{profile_id, cell, flat});
    for (std::size_t i = profile.input_count(); i-- > 0;) {
      if (++cell[i] < profile.patterns()[i].cells()) break;
      cell[i] = 0;
    }
  }
  return out;
}

// Subset containing the input vector u (one coordinate per input).
inline SubsetId locate(const PartitionProfile& profile, const Eigen::VectorXd& u,
                       std::size_t profile_id = 0) {
  if (static_cast<std::size_t>(u.size()) != profile.input_count()) {
    throw std::invalid_argument("locate: input vector has " + std::to_string(u.size()) +
                                " coordinates, profile expects " +
                                std::to_string(profile.input_count()));
  }
  SubsetId id;
  id.profile = profile_id;
  id.cell.resize(profile.input_count());
  for (std::size_t i = 0; i < profile.input_count(); ++i) {
    id.cell[i] = profile.patterns()[i].cell_of(u(static_cast<Eigen::Index>(i)));
  }
  id.flat = flatten_cell_index(profile, id.cell);
  return id;
}

}  // namespace switchpred
