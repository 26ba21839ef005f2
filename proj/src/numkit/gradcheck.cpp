#include "descore/numkit/gradcheck.hpp"

#include <cmath>
#include <cstring>

namespace descore::numkit {

CheckReport finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                              const std::vector<double>& theta,
                              const std::vector<double>& analytic,
                              const FiniteDiffOptions& opts) {
    if (opts.h <= 0.0) throw NumericError("finite_diff_check: h must be positive");
    if (theta.size() != analytic.size()) {
        throw NumericError("finite_diff_check: analytic gradient length mismatch");
    }

    const double probe1 = f(theta);
    const double probe2 = f(theta);
    if (std::memcmp(&probe1, &probe2, sizeof(double)) != 0) {
        throw NumericError("finite_diff_check: non-deterministic objective");
    }

    CheckReport report;
    report.n_params = static_cast<int>(theta.size());
    report.pass = true;
    std::vector<double> probe = theta;
    for (size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        probe[i] = orig + opts.h;
        const double fp = f(probe);
        probe[i] = orig - opts.h;
        const double fm = f(probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * opts.h);
        const double abs_err = std::abs(numeric - analytic[i]);
        const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
        const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
        if (abs_err > report.max_abs_err) report.max_abs_err = abs_err;
        if (rel_err > report.max_rel_err) {
            report.max_rel_err = rel_err;
            report.worst_index = static_cast<int>(i);
        }
        if (abs_err > opts.atol + opts.rtol * scale) report.pass = false;
    }
    return report;
}

std::vector<double> flatten(const std::vector<const Tensor*>& tensors) {
    std::vector<double> flat;
    size_t total = 0;
    for (const Tensor* t : tensors) total += t->data.size();
    flat.reserve(total);
    for (const Tensor* t : tensors) flat.insert(flat.end(), t->data.begin(), t->data.end());
    return flat;
}

void unflatten(const std::vector<double>& flat, const std::vector<Tensor*>& tensors) {
    size_t off = 0;
    for (Tensor* t : tensors) {
        if (off + t->data.size() > flat.size()) {
            throw NumericError("unflatten: flat vector too short");
        }
        std::copy(flat.begin() + static_cast<ptrdiff_t>(off),
                  flat.begin() + static_cast<ptrdiff_t>(off + t->data.size()), t->data.begin());
        off += t->data.size();
    }
    if (off != flat.size()) throw NumericError("unflatten: flat vector too long");
}

}  // namespace descore::numkit
