#include "awconv/checks.hpp"
#include "doctest.h"

// Reduced-trial smoke runs of the shared verification suites; the acceptance
// binary runs them at full strength.

TEST_CASE("verification suite passes at reduced trial counts") {
  awconv::checks::CheckOptions opts;
  opts.equivalence_trials = 25;
  opts.identity_trials = 10;
  const auto results = awconv::checks::run_verification_suite(opts);
  CHECK(results.size() >= 12);
  for (const auto& r : results) {
    INFO(r.name, ": max_abs_diff=", r.max_abs_diff, " note=", r.note);
    CHECK(r.pass);
  }
}

TEST_CASE("gradient suite passes across two seeds") {
  const auto cases = awconv::checks::run_gradient_suite(900, 2, 1e-5, 1e-4);
  CHECK(cases.size() >= 15);
  for (const auto& c : cases) {
    INFO(c.name, ": max_rel_err=", c.max_rel_err, " note=", c.note);
    CHECK(c.pass);
  }
}
