#pragma once

// Central finite-difference gradient checking, independent of the tape:
// it only re-runs the forward function at perturbed parameter values.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "danhar/tensor.hpp"

namespace gradcheck {

struct Report {
    double max_rel_error = 0.0;
    std::string worst;  // description of the worst element
};

// forward() must be a pure function of the tensors in `params` (state such as
// batch-norm running statistics must be snapshotted/restored by the caller or
// left un-updated). Returns the worst relative error over every element of
// every parameter, comparing tape gradients against central differences.
inline Report check(const std::vector<std::pair<std::string, danhar::Tensor>>& params,
                    const std::function<double()>& forward_loss,
                    const std::function<void()>& backward_into_params, double h = 1e-5,
                    double denom_floor = 1e-6) {
    backward_into_params();
    Report report;
    for (const auto& [name, param] : params) {
        danhar::Tensor p = param;
        const std::vector<double>& g = p.grad();
        std::vector<double>& v = p.values();
        for (size_t i = 0; i < v.size(); ++i) {
            const double keep = v[i];
            v[i] = keep + h;
            const double up = forward_loss();
            v[i] = keep - h;
            const double down = forward_loss();
            v[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({std::fabs(fd), std::fabs(g[i]), denom_floor});
            const double rel = std::fabs(fd - g[i]) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = name + "[" + std::to_string(i) + "] autodiff=" +
                               std::to_string(g[i]) + " fd=" + std::to_string(fd);
            }
        }
    }
    return report;
}

inline std::vector<double> random_values(size_t n, std::mt19937_64& rng, double lo = -2.0,
                                         double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

}  // namespace gradcheck
