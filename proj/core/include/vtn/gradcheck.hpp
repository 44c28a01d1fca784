// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference verification of every differentiable op in 64-bit.

#ifndef VTN_GRADCHECK_HPP_
#define VTN_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "vtn/tape.hpp"

namespace vtn {

// Largest elementwise relative error |a - n| / max(|a|, |n|, floor) between
// the analytic gradient a and the central difference n of the scalar `f`
// with respect to every element of every leaf. `f` must read each leaf
// through tape.parameter().
double max_relative_error(const std::function<Var<double>(Tape<double>&)>& f,
                          const std::vector<Parameter<double>*>& leaves, double h = 1e-5, double floor = 1e-6);

struct GradcheckCase {
  std::string op;
  double max_rel_error = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double tolerance = 1e-4;
  double seconds = 0;

  bool passed() const;
  std::vector<std::string> failing_ops() const;
  // One line per op plus a summary line.
  std::string format() const;
};

// Names of the ops covered by the suite, in report order.
std::vector<std::string> gradcheck_ops();

GradcheckReport run_gradcheck(double tolerance = 1e-4, std::uint64_t seed = 7);

}  // namespace vtn

#endif  // VTN_GRADCHECK_HPP_
