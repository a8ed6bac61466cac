// SPDX-License-Identifier: Apache-2.0
#include "triposer/diffusion.hpp"

#include <cmath>
#include <string>

#include "triposer/errors.hpp"

namespace triposer {

void NoiseSchedule::validate() const {
    if (gamma.empty() || gamma.size() != alpha_bar.size())
        throw DataError("noise schedule is empty or inconsistent");
    double running = 1.0;
    double prev_abar = 1.0;
    for (size_t i = 0; i < gamma.size(); ++i) {
        if (!(gamma[i] > 0.0 && gamma[i] < 1.0))
            throw DataError("gamma_t must lie in (0, 1)");
        running *= 1.0 - gamma[i];
        if (std::abs(alpha_bar[i] - running) > 1e-12 * running)
            throw DataError("alpha_bar is not the running product of (1 - gamma)");
        if (!(alpha_bar[i] < prev_abar)) throw DataError("alpha_bar must be strictly decreasing");
        prev_abar = alpha_bar[i];
    }
    if (!(alpha_bar.back() > 0.0)) throw DataError("alpha_bar_T must stay positive");
}

NoiseSchedule make_linear_schedule(int steps, double gamma_start, double gamma_end) {
    if (steps < 1) throw DataError("schedule needs at least one step");
    if (!(gamma_start > 0.0 && gamma_start <= gamma_end && gamma_end < 1.0))
        throw DataError("schedule endpoints must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.gamma.resize(static_cast<size_t>(steps));
    s.alpha_bar.resize(static_cast<size_t>(steps));
    double running = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
        s.gamma[static_cast<size_t>(t)] = gamma_start + (gamma_end - gamma_start) * frac;
        running *= 1.0 - s.gamma[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] = running;
    }
    return s;
}

namespace {

void require_step(int t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.steps())
        throw DataError("diffusion step " + std::to_string(t) + " outside [1, " +
                        std::to_string(sched.steps()) + "]");
}

}  // namespace

Tensor forward_step(const Tensor& prev, int t, const NoiseSchedule& sched, Rng& rng) {
    require_step(t, sched);
    const double g = sched.gamma_at(t);
    const double keep = std::sqrt(1.0 - g);
    const double add = std::sqrt(g);
    Tensor out(prev.shape());
    for (int64_t i = 0; i < prev.numel(); ++i) out[i] = keep * prev[i] + add * rng.normal();
    return out;
}

Tensor forward_marginal(const Tensor& x0, int t, const NoiseSchedule& sched, const Tensor& eps) {
    require_step(t, sched);
    if (!x0.same_shape(eps)) throw DataError("forward_marginal: eps shape mismatch");
    const double abar = sched.alpha_bar_at(t);
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    Tensor out(x0.shape());
    for (int64_t i = 0; i < x0.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

TrainingExample make_training_example(const Tensor& x0, const NoiseSchedule& sched, Rng& rng) {
    TrainingExample ex;
    ex.t = rng.uniform_int(1, sched.steps());
    ex.eps = Tensor(x0.shape());
    rng.fill_normal(ex.eps);
    ex.latent = forward_marginal(x0, ex.t, sched, ex.eps);
    return ex;
}

Tensor ancestral_sample(const EpsModel& model, const NoiseSchedule& sched, Rng& rng,
                        const std::vector<int>& shape) {
    sched.validate();
    Tensor x(shape);
    rng.fill_normal(x);
    for (int t = sched.steps(); t >= 1; --t) {
        const Tensor eps_hat = model(x, t);
        if (!eps_hat.same_shape(x)) throw DataError("denoiser output shape mismatch");
        const double g = sched.gamma_at(t);
        const double abar = sched.alpha_bar_at(t);
        const double inv_keep = 1.0 / std::sqrt(1.0 - g);
        const double eps_coef = g / std::sqrt(1.0 - abar);
        const double sigma = std::sqrt(g);
        if (t > 1) {
            for (int64_t i = 0; i < x.numel(); ++i)
                x[i] = inv_keep * (x[i] - eps_coef * eps_hat[i]) + sigma * rng.normal();
        } else {
            for (int64_t i = 0; i < x.numel(); ++i)
                x[i] = inv_keep * (x[i] - eps_coef * eps_hat[i]);
        }
        if (!x.all_finite())
            throw NumericError("ancestral sampling diverged at step " + std::to_string(t) +
                               " (max |x| = " + std::to_string(x.max_abs()) + ")");
    }
    return x;
}

}  // namespace triposer
