#pragma once

#include <string>
#include <vector>

namespace micle {

struct CriterionResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

// The fast verification suite: loss-oracle equivalence, the finite-difference
// gradient suite, multi-instance sampler properties, loss invariants, metric
// oracles, and bootstrap behavior. Training-scale checks live in the
// acceptance test binary.
CriterionResult verify_loss_oracle();        // criterion 1
CriterionResult verify_gradients();          // criterion 2
CriterionResult verify_sampler();            // criterion 3
CriterionResult verify_loss_invariants();    // criterion 4
CriterionResult verify_metric_oracles();     // criterion 5
CriterionResult verify_bootstrap();          // criterion 6

std::vector<CriterionResult> run_verify_suite();

}  // namespace micle
