#pragma once

#include <span>
#include <vector>

namespace ssnocc {

// A diagnostic value plus a flag raised when a convention replaced the
// estimator (constant chains, too few draws).
struct Diagnostic {
  double value = 0.0;
  bool flagged = false;
};

// Split-chain rank-normalized R-hat: the larger of the bulk and folded
// (tail) statistics. All chains must have equal length. Constant draws give
// 1 with the flag set; chains that are each constant but differ give +inf.
Diagnostic rhat(std::span<const std::vector<double>> chains);

// Multi-chain effective sample size from autocorrelations, truncated with
// Geyer's initial positive (monotone) sequence; capped at the draw count.
// Constant draws give the draw count with the flag set.
Diagnostic ess(std::span<const std::vector<double>> chains);

// Linear-interpolation (type 7) quantile of an ascending sequence.
double quantile_sorted(std::span<const double> sorted, double q);

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

Moments pooled_moments(std::span<const std::vector<double>> chains);

}  // namespace ssnocc
