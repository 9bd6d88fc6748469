#pragma once

#include <string>
#include <vector>

#include "ceidm/types.hpp"

namespace ceidm {

struct GradCase {
  std::string name;
  double rel_err = 0.0;
  double tol = 0.0;

  bool passed() const { return rel_err <= tol; }
};

// Analytic vs central-difference gradients (eps = 1e-5) for every trainable
// chain in the stack: a quadratic sanity case, softmax cross-entropy, the
// gated attention value projection, the deep triplet embedding through its
// role projections, and the entity mask/enhance/fuse chain.
std::vector<GradCase> run_gradient_suite(std::uint64_t seed);

bool gradient_suite_passed(const std::vector<GradCase>& cases);

}  // namespace ceidm
