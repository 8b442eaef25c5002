#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ear::nn {

/// Comparison of tape gradients against central finite differences for one op.
/// Error is ||analytic - numeric||_inf / max(||numeric||_inf, 1e-12).
struct GradcheckCase {
  std::string op;
  int configuration = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  int configurations = 0;
  bool passed() const;
  /// Largest error per op name over all configurations.
  std::vector<GradcheckCase> worst_per_op() const;
};

inline constexpr double kSmoothTolerance = 1e-6;
inline constexpr double kPiecewiseTolerance = 1e-4;

/// Runs every differentiable primitive and the composite training loss on random toy
/// shapes and parameters in double precision.
GradcheckReport run_gradcheck(int configurations, std::uint64_t seed);

}  // namespace ear::nn
