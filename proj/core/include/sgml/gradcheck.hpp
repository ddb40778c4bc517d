#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sgml {

/// Central-difference verification of every analytic derivative: the scalar
/// losses, the cosine Jacobian, the batch reductions and the full network
/// objective for each training variant.
struct GradCheckOptions {
  std::size_t scalar_cases = 1000;
  std::size_t network_cases = 20;
  double step = 1e-6;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  /// Negates one analytic derivative per check family, to prove the checker
  /// can fail.
  bool inject_sign_flip = false;
};

struct GradCheckEntry {
  std::string name;
  std::size_t cases = 0;
  std::size_t derivatives = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool passed() const;
  std::string to_text() const;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Denominator floors for relative errors. A central difference with
/// h = 1e-6 carries about eps * |loss| / h of rounding noise: ~1e-10 for the
/// scalar losses, ~2e-9 for a batch objective that sums BCE over K
/// attributes. Below the floor the comparison is effectively absolute.
inline constexpr double kScalarGradCheckFloor = 1e-6;
inline constexpr double kNetworkGradCheckFloor = 1e-3;

GradCheckReport run_scalar_gradcheck(const GradCheckOptions& options);
GradCheckReport run_network_gradcheck(const GradCheckOptions& options);
GradCheckReport run_gradcheck(const GradCheckOptions& options);

}  // namespace sgml
