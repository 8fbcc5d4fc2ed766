#ifndef PARTPOOL_GRADCHECK_HPP_
#define PARTPOOL_GRADCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace partpool {

struct GradCheckOptions {
  uint64_t seed = 1;
  double h = 1e-5;
  double tolerance = 1e-4;
  int trials = 8;  // random points per operator
  // Operator whose analytic gradient is deliberately scaled before the
  // comparison (negative control). Empty: none.
  std::string inject_fault;
};

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  int points = 0;   // points that were compared
  int skipped = 0;  // points rejected by the kink / argmax-margin filter
  bool passed = false;
};

// Operators covered, in the order they are reported.
const std::vector<std::string>& gradient_operator_names();

/// Compares every analytic backward against central finite differences.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options);

}  // namespace partpool

#endif  // PARTPOOL_GRADCHECK_HPP_
