#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace awconv::checks {

struct PropertyResult {
  std::string name;
  bool pass = false;
  double max_abs_diff = 0;
  int64_t trials = 0;
  std::string note;
};

struct CheckOptions {
  uint64_t seed = 12345;
  int64_t equivalence_trials = 200;  // optimized-vs-reference convolution agreement
  int64_t identity_trials = 50;      // algebraic identities and invariants
  double tol_f64 = 1e-10;
  double tol_f32 = 1e-4;
};

// Oracle-equivalence and structural-invariant suite over randomized small
// instances (N<=3, channels<=4, spatial<=8, kernels in {1,3}).
std::vector<PropertyResult> run_verification_suite(const CheckOptions& opts);

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0;
  bool pass = false;
  std::string note;
};

// Central-difference gradient verification (f64) for every differentiable op
// and for a full bottleneck block carrying an AW convolution, repeated across
// `num_seeds` seeds.
std::vector<GradCheckCase> run_gradient_suite(uint64_t seed_base, int64_t num_seeds,
                                              double eps = 1e-5, double tol = 1e-4);

}  // namespace awconv::checks
