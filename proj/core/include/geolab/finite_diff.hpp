#pragma once

#include <functional>
#include <string>
#include <vector>

#include "geolab/tensor.hpp"

namespace geolab {

// A scalar-valued function of one tensor. Implementations must not keep state
// across calls: each invocation may run on a fresh graph or with no graph.
using TensorFn = std::function<TensorPtr(const TensorPtr&)>;

// Compares the reverse-mode gradient of f at x against central differences
// with step h. Returns max over coordinates of
//   |analytic - numeric| / max(1, |numeric|).
double finite_diff_check(const TensorFn& f, const TensorPtr& x, double h = 1e-5);

// One row of the gradient-check table.
struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 1e-4;
    bool passed = false;
};

// Runs the registered suite: every op kind plus every geometry loss, each on
// `trials` seeded random inputs kept away from the op's non-smooth set.
// `filter` empty means everything; otherwise comma-separated name substrings.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, int trials,
                                                const std::string& filter = "");

}  // namespace geolab
