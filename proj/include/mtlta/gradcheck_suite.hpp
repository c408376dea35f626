#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtlta {

inline constexpr double kOpGradTolerance = 1e-6;
inline constexpr double kModelGradTolerance = 1e-4;

struct GradcheckEntry {
  std::string name;  // op name, or "model:<variant>"
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// Central-difference checks (eps = 1e-5) of every elementary op and of the
/// forward loss of all four model variants at tiny shapes.
std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace mtlta
