#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "actra/tensor.hpp"

namespace actra {

// Central finite-difference gradient check. fn evaluates the scalar function
// at the current contents of the tensors; analytic holds the gradient claimed
// for each tensor (same order). Returns the worst relative error
//   |analytic - difference| / max(|analytic|, |difference|, 1e-8)
// over every coordinate of every tensor.
inline double grad_check(const std::function<double()>& fn, std::vector<Tensor*> inputs,
                         const std::vector<Tensor>& analytic, double epsilon = 1e-6) {
    if (!(epsilon > 0.0 && epsilon <= 1e-3))
        throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-3]");
    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor& x = *inputs[t];
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double keep = x.data[i];
            x.data[i] = keep + epsilon;
            const double fp = fn();
            x.data[i] = keep - epsilon;
            const double fm = fn();
            x.data[i] = keep;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::invalid_argument("grad_check: non-finite function evaluation");
            const double fd = (fp - fm) / (2.0 * epsilon);
            const double an = analytic[t].data[i];
            const double err = std::abs(fd - an) / std::max({std::abs(an), std::abs(fd), 1e-8});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace actra
