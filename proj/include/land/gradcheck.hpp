#pragma once

#include <string>
#include <vector>

#include "land/neural.hpp"

namespace land {

// Names of the finite-difference cases: every layer kind, then composite
// VAE and U-Net fragments.
std::vector<std::string> gradcheck_case_names();

// Runs the cases whose name contains `filter` (all when empty).
std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckOptions& opts = {}, const std::string& filter = "");

}  // namespace land
