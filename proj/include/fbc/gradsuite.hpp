#pragma once

#include <string>
#include <vector>

#include "fbc/gradcheck.hpp"

namespace fbc {

struct SuiteCheck {
    std::string name;
    double max_rel_err = 0.0;
};

// Finite-difference validation of each op, the FBCA block (C in {4,8,16}),
// the FBCsp module, the neck and the head, each repeated over `seeds`
// random instances (eval-mode BN). Targets is a subset of
// {"ops","fbca","fbcsp","neck","head"}; empty means all.
std::vector<SuiteCheck> run_gradcheck_suite(const std::vector<std::string>& targets, int seeds,
                                            double h);

}  // namespace fbc
