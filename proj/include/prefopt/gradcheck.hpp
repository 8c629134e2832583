#pragma once

#include <cstdint>
#include <vector>

#include "prefopt/losses.hpp"

namespace prefopt {

struct GradcheckConfig {
    std::uint64_t seed = 20240901;
    int instances = 100; // per loss, cycling vocab {3,8,32} x length {1,4,16}
    double h = 1e-5;
    double tolerance = 1e-6;
};

struct GradcheckEntry {
    Method method = Method::NllPll;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Certifies every analytic logit gradient against the central-difference
// oracle on randomized instances. The bnf check differentiates the loss with
// the dynamic target frozen at the base point, which is what its
// stop-gradient semantics define.
std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckConfig& cfg);

} // namespace prefopt
