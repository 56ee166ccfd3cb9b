#pragma once

// Finite-difference verification of the autodiff engine and the model built on it.
// Every check runs in double precision: a random linear functional L = <R, f(inputs)>
// is differentiated analytically and compared against the central difference
// (L(x + h v) - L(x - h v)) / 2h along a random direction v.

#include <cstdint>
#include <string>
#include <vector>

namespace specmix {

struct GradcheckOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double first_order_tolerance = 1e-4;
  double second_order_tolerance = 1e-3;
  /// Restricts the run to checks whose name contains this text; empty runs everything.
  std::string filter;
};

struct GradcheckRow {
  std::string name;
  std::size_t trials = 0;
  std::size_t redrawn = 0;  // trials replaced because the step crossed a non-smooth point
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double seconds = 0.0;

  bool passed() const;
  std::string table() const;
};

GradcheckReport run_gradcheck(const GradcheckOptions& opts = {});

/// Relative discrepancy used by every check: |a - b| / max(|a|, |b|, 1e-6).
double relative_error(double analytic, double numeric);

}  // namespace specmix
