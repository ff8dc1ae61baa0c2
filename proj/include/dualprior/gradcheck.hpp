#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dualprior/tensor.hpp"

namespace dualprior {

struct GradcheckEntry {
    std::size_t tensor = 0;  // index into the checked tensor list
    std::size_t element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = true;
};

/// Relative error used throughout: |a - n| / max(|a|, |n|, floor).
/// The floor keeps elements whose true gradient is ~0 from dominating.
double gradcheck_rel_error(double analytic, double numeric, double floor = 1e-8);

/// Check d f(x)/dx for every element of x with a five-point central stencil.
GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, double tol);

/// Check a scalar loss w.r.t. chosen elements of leaf tensors, perturbing them
/// in place. `loss` is re-evaluated from scratch for each probe and must be
/// deterministic. `elements[i]` lists the probed indices of `tensors[i]`.
GradcheckReport gradcheck_elements(const std::function<Tensor()>& loss, std::vector<Tensor> tensors,
                                   const std::vector<std::vector<std::size_t>>& elements, double h, double tol);

}  // namespace dualprior
