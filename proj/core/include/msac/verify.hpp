#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msac {

// Randomized equivalence suites: the dense-product bridge, the SAC/plain-2D
// reduction and the 2D/1D reduction. Each compares the shipped operator
// against an independent reference path and reports the worst deviation.
struct VerifyReport {
  std::string suite;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  double max_abs_deviation = 0.0;
  double max_rel_deviation = 0.0;
  double tolerance = 0.0;  // on the relative deviation unless exact
  bool exact = false;      // true when the suite demands bit-equal results
  bool pass = false;
};

const std::vector<std::string>& verify_suite_names();  // lemma1, sac-sa2d, sa2d-1d
VerifyReport run_verify_suite(const std::string& suite, std::size_t trials, std::uint64_t seed);
std::vector<VerifyReport> run_all_verify_suites(std::size_t trials, std::uint64_t seed);

}  // namespace msac
