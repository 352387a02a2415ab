#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msac/autodiff.hpp"
#include "msac/rng.hpp"

namespace msac {

struct GradReport {
  std::string op;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t probe_count = 0;
};

// Ops with a randomized gradient-check instance builder. Covers every tensor
// op on the tape plus the two application losses.
const std::vector<std::string>& registered_grad_ops();
bool is_registered_grad_op(const std::string& op);
std::size_t default_grad_trials(const std::string& op);

// Runs `trials` random instances of the op, compares reverse-mode gradients
// of a weighted scalar loss against central finite differences on every
// leaf, and reports the worst case. Relative error uses
// |a - n| / max(|a|, |n|, floor).
GradReport grad_check(const std::string& op, std::size_t trials, std::uint64_t seed,
                      double eps = 1e-4, double rel_floor = 1e-8);

}  // namespace msac
