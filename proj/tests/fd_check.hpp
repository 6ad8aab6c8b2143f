#ifndef LBFTI_TESTS_FD_CHECK_HPP_
#define LBFTI_TESTS_FD_CHECK_HPP_

// Central finite-difference oracle for gradient tests. Stays independent of
// the analytic backward paths it checks.

#include <cmath>
#include <functional>

#include "lbfti/core/rng.hpp"
#include "lbfti/core/tensor.hpp"

namespace lbfti_test {

using lbfti::Rng;
using lbfti::Tensor;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.normal(0.0, scale));
    return t;
}

/// Central differences of a scalar-valued function at x.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double step = 1e-3) {
    Tensor g(x.shape());
    Tensor xp = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        const float orig = xp[i];
        xp[i] = orig + static_cast<float>(step);
        const double fp = f(xp);
        xp[i] = orig - static_cast<float>(step);
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = static_cast<float>((fp - fm) / (2.0 * step));
    }
    return g;
}

/// Relative error between gradient vectors, measured on the L2 norm of the
/// difference. Returns 0 when both are (near) zero.
inline double grad_rel_error(const Tensor& analytic, const Tensor& fd) {
    double diff = 0.0, ref = 0.0;
    for (int64_t i = 0; i < analytic.size(); ++i) {
        const double d = static_cast<double>(analytic[i]) - fd[i];
        diff += d * d;
        ref += static_cast<double>(fd[i]) * fd[i];
    }
    if (ref < 1e-20) return std::sqrt(diff);
    return std::sqrt(diff / ref);
}

}  // namespace lbfti_test

#endif  // LBFTI_TESTS_FD_CHECK_HPP_
