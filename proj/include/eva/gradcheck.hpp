#pragma once

#include <functional>
#include <string>
#include <vector>

#include "eva/params.hpp"
#include "eva/tape.hpp"

namespace eva::ag {

struct FiniteDiffEntry {
    std::string param;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
};

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    double tolerance = 0.0;
    bool pass = true;
    std::vector<FiniteDiffEntry> entries;
};

// Compares the tape gradient of `build_loss` against central differences for
// every trainable scalar in `store`. `build_loss` must be a pure function of
// the store contents (it is re-invoked on a fresh tape per evaluation).
FiniteDiffReport finite_diff_check(ParameterStore& store,
                                   const std::function<Value(Tape&)>& build_loss,
                                   double epsilon = 1e-5, double tolerance = 1e-4);

}  // namespace eva::ag
