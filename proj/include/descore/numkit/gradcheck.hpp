#pragma once

#include <functional>
#include <string>
#include <vector>

#include "descore/numkit/tensor.hpp"

namespace descore::numkit {

struct CheckReport {
    int n_params = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int worst_index = -1;
    bool pass = false;
};

struct FiniteDiffOptions {
    double h = 1e-5;
    double rtol = 1e-6;
    double atol = 1e-9;
};

/// Central-difference check of `analytic` against f around theta.
/// f is evaluated twice at theta first; a bitwise mismatch means the function
/// is not deterministic and the check refuses to run.
CheckReport finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                              const std::vector<double>& theta,
                              const std::vector<double>& analytic,
                              const FiniteDiffOptions& opts = {});

// Flatten helpers for checking whole parameter structs coordinate by coordinate.
std::vector<double> flatten(const std::vector<const Tensor*>& tensors);
void unflatten(const std::vector<double>& flat, const std::vector<Tensor*>& tensors);

}  // namespace descore::numkit
