// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "triposer/rng.hpp"
#include "triposer/tensor.hpp"

namespace triposer {

// Per-step noise variances gamma_t and cumulative products alpha_bar_t.
// Index t runs 1..T; storage is 0-based.
struct NoiseSchedule {
    std::vector<double> gamma;      // length T, each in (0,1)
    std::vector<double> alpha_bar;  // running product of (1 - gamma)

    int steps() const { return static_cast<int>(gamma.size()); }
    double gamma_at(int t) const { return gamma[static_cast<size_t>(t - 1)]; }
    double alpha_bar_at(int t) const { return alpha_bar[static_cast<size_t>(t - 1)]; }
    void validate() const;
};

// gamma interpolates linearly from gamma_start (t=1) to gamma_end (t=T).
// Defaults are the standard DDPM endpoints for T=1000; shorter schedules
// need proportionally larger endpoints to drive alpha_bar_T near zero.
NoiseSchedule make_linear_schedule(int steps, double gamma_start = 1e-4, double gamma_end = 0.02);

// One forward step: sqrt(1-gamma_t) * prev + sqrt(gamma_t) * z.
Tensor forward_step(const Tensor& prev, int t, const NoiseSchedule& sched, Rng& rng);

// Closed-form marginal: sqrt(abar_t) * x0 + sqrt(1-abar_t) * eps.
Tensor forward_marginal(const Tensor& x0, int t, const NoiseSchedule& sched, const Tensor& eps);

struct TrainingExample {
    Tensor latent;  // noisy marginal at step t
    Tensor eps;     // the injected noise (regression target)
    int t = 0;
};

// Samples t uniform in [1, T] and eps ~ N(0, I); draws t first, then eps.
TrainingExample make_training_example(const Tensor& x0, const NoiseSchedule& sched, Rng& rng);

// Denoiser interface for sampling: (latent, t) -> epsilon prediction.
using EpsModel = std::function<Tensor(const Tensor& latent, int t)>;

// Standard ancestral DDPM sampler with posterior variance gamma_t. Starts
// from N(0, I) at t=T, adds noise at every step except the last. Aborts with
// diagnostics on non-finite intermediates.
Tensor ancestral_sample(const EpsModel& model, const NoiseSchedule& sched, Rng& rng,
                        const std::vector<int>& shape);

}  // namespace triposer
