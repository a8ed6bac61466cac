// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking against the analytic backward
// passes, over random directions in parameter (or input) space.
#pragma once

#include <functional>
#include <vector>

#include "triposer/denoiser_blocks.hpp"
#include "triposer/rng.hpp"

namespace fdcheck {

using triposer::ParamStore;
using triposer::Rng;
using triposer::Tensor;

// Max relative error between dot(grad, dir) and the central difference of
// the loss along dir, over n random unit directions in parameter space.
inline double params_max_rel_err(ParamStore& store, const std::function<double()>& loss,
                                 const std::vector<double>& analytic_grad, Rng& rng, int n_dirs,
                                 double h = 1e-5) {
    const std::vector<double> theta = store.gather_values();
    const size_t n = theta.size();
    double worst = 0.0;
    for (int trial = 0; trial < n_dirs; ++trial) {
        std::vector<double> dir(n);
        double norm = 0.0;
        for (size_t i = 0; i < n; ++i) {
            dir[i] = rng.normal();
            norm += dir[i] * dir[i];
        }
        norm = std::sqrt(norm);
        for (double& d : dir) d /= norm;

        std::vector<double> plus = theta, minus = theta;
        for (size_t i = 0; i < n; ++i) {
            plus[i] += h * dir[i];
            minus[i] -= h * dir[i];
        }
        store.scatter_values(plus);
        const double lp = loss();
        store.scatter_values(minus);
        const double lm = loss();
        store.scatter_values(theta);

        const double fd = (lp - lm) / (2.0 * h);
        double an = 0.0;
        for (size_t i = 0; i < n; ++i) an += analytic_grad[i] * dir[i];
        const double denom = std::max(1e-8, std::abs(fd) + std::abs(an));
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

// Same, perturbing one input tensor instead of the parameters.
inline double input_max_rel_err(Tensor& x, const std::function<double()>& loss,
                                const Tensor& analytic_dx, Rng& rng, int n_dirs,
                                double h = 1e-5) {
    const Tensor x0 = x;
    double worst = 0.0;
    for (int trial = 0; trial < n_dirs; ++trial) {
        Tensor dir(x.shape());
        double norm = 0.0;
        for (int64_t i = 0; i < dir.numel(); ++i) {
            dir[i] = rng.normal();
            norm += dir[i] * dir[i];
        }
        norm = std::sqrt(norm);
        for (int64_t i = 0; i < dir.numel(); ++i) dir[i] /= norm;

        for (int64_t i = 0; i < x.numel(); ++i) x[i] = x0[i] + h * dir[i];
        const double lp = loss();
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = x0[i] - h * dir[i];
        const double lm = loss();
        x = x0;

        const double fd = (lp - lm) / (2.0 * h);
        double an = 0.0;
        for (int64_t i = 0; i < dir.numel(); ++i) an += analytic_dx[i] * dir[i];
        const double denom = std::max(1e-8, std::abs(fd) + std::abs(an));
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

// Fan-in random init with non-trivial biases/gains so every parameter
// participates in the finite-difference probe.
inline void randomize_store(ParamStore& store, Rng& rng) {
    for (int id = 0; id < store.count(); ++id) {
        const auto& info = store.manifest()[static_cast<size_t>(id)];
        Tensor& v = store.value(id);
        if (info.shape.size() == 4) {
            const double s =
                1.0 / std::sqrt(static_cast<double>(info.shape[1]) * info.shape[2] * info.shape[3]);
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * s;
        } else if (info.shape.size() == 2) {
            const double s = 1.0 / std::sqrt(static_cast<double>(info.shape[1]));
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * s;
        } else if (info.name.size() >= 2 && info.name.substr(info.name.size() - 2) == ".g") {
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = 1.0 + 0.1 * rng.normal();
        } else {
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = 0.1 * rng.normal();
        }
    }
}

}  // namespace fdcheck
