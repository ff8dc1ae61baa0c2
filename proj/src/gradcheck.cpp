#include "dualprior/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dualprior/error.hpp"

namespace dualprior {

double gradcheck_rel_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, double tol) {
    Tensor leaf = Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
    std::vector<std::size_t> all(x.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return gradcheck_elements([&] { return f(leaf); }, {leaf}, {all}, h, tol);
}

GradcheckReport gradcheck_elements(const std::function<Tensor()>& loss, std::vector<Tensor> tensors,
                                   const std::vector<std::vector<std::size_t>>& elements, double h, double tol) {
    if (tensors.size() != elements.size()) throw ShapeError("gradcheck: tensors/elements length mismatch");
    for (auto& t : tensors) t.zero_grad();
    Tensor value = loss();
    if (value.numel() != 1) throw ShapeError("gradcheck: loss must be scalar");
    backward(value);

    GradcheckReport report;
    report.tolerance = tol;
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        Tensor& t = tensors[ti];
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        for (std::size_t e : elements[ti]) {
            auto data = t.mutable_data();
            const double orig = data[e];
            auto at = [&](double offset) {
                NoGradGuard no_grad;  // probes only need the value
                data[e] = orig + offset;
                return loss().item();
            };
            // Five-point stencil: O(h^4) truncation lets h stay large enough
            // that rounding in the loss does not dominate small gradients.
            const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
            data[e] = orig;
            GradcheckEntry entry;
            entry.tensor = ti;
            entry.element = e;
            entry.analytic = analytic[e];
            entry.numeric = numeric;
            entry.rel_error = gradcheck_rel_error(entry.analytic, entry.numeric);
            report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
            report.entries.push_back(entry);
        }
        t.zero_grad();
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace dualprior
