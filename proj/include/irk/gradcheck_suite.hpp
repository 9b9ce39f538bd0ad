#pragma once

#include <string>
#include <vector>

namespace irk {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
  int64_t checked = 0;
  double seconds = 0;
};

// Finite-difference verification of every loss and layer on small random
// instances, 64-bit throughout. Tolerance 1e-4.
std::vector<GradCheckEntry> run_gradcheck_suite(uint64_t seed);

bool gradcheck_passed(const std::vector<GradCheckEntry>& entries, double tol = 1e-4);
std::string gradcheck_table(const std::vector<GradCheckEntry>& entries, double tol = 1e-4);

}  // namespace irk
