#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace genspec {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one `genspec` invocation; argv[0] is the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast invariant suite behind `genspec selftest`.
std::vector<SelfCheck> run_selftest();

}  // namespace genspec
