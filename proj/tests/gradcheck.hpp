#pragma once

// Finite-difference gradient checks for the denoiser plus its loss, shared by the
// unit and acceptance tests. The vb term is re-derived here with the reverse mean
// held fixed, independently of the library's loss code.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "padkit/denoiser.hpp"

namespace gradcheck {

using namespace padkit;

inline Image noise_image(Eigen::Index h, Eigen::Index w, Rng& rng, double scale = 1.0, double shift = 0.0) {
    Image m(h, w);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = shift + scale * standard_normal(rng);
    return m;
}

inline Image uniform_image(Eigen::Index h, Eigen::Index w, Rng& rng) {
    Image m(h, w);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng);
    return m;
}

inline DenoiserConfig net_config(bool super) {
    DenoiserConfig c;
    c.super_resolution = super;
    return c;
}

/// vb term with the reverse mean held at `mu_p`; only `v` varies.
inline double vb_detached(const Image& mu_p, const Image& v, const Image& x0, const Image& x_t, int t,
                   const ScheduleSpec& s) {
    double sum = 0.0;
    const double lb = std::log(s.beta[t]);
    const double lbt = s.log_beta_tilde_clipped[t];
    const double ab = s.alpha_bar[t];
    const double ab_prev = s.alpha_bar[t - 1];
    const double var_q = s.beta_tilde[t];
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        const double log_var = v.data()[i] * lb + (1.0 - v.data()[i]) * lbt;
        const double var_p = std::exp(log_var);
        if (t == 1) {
            const double d = x0.data()[i] - mu_p.data()[i];
            sum += 0.5 * (std::log(2.0 * std::numbers::pi) + log_var + d * d / var_p);
        } else {
            const double mu_q = std::sqrt(ab_prev) * s.beta[t] / (1.0 - ab) * x0.data()[i] +
                                std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab) * x_t.data()[i];
            const double d = mu_q - mu_p.data()[i];
            sum += 0.5 * (var_q / var_p + d * d / var_p - 1.0 + log_var - std::log(var_q));
        }
    }
    return sum / double(x0.size());
}

struct Problem {
    Image x0, eps, x_t, condition;
    std::optional<Image> lowres;
    int t = 1;
    LossWeights weights;
    ScheduleSpec schedule;
};

inline Problem make_problem(bool super, int t, std::uint64_t seed) {
    Rng rng(seed);
    Problem p;
    p.schedule = make_schedule(super ? ScheduleKind::linear : ScheduleKind::squared_cosine, 100);
    p.x0 = uniform_image(8, 8, rng);
    p.eps = noise_image(8, 8, rng);
    p.condition = uniform_image(8, 8, rng);
    if (super) p.lowres = uniform_image(8, 8, rng);
    p.t = t;
    p.x_t = q_sample(p.x0, t, p.eps, p.schedule);
    p.weights = super ? LossWeights::super_phase() : LossWeights::base_phase();
    return p;
}

struct FdResult {
    double worst = 0.0;
    int checked = 0;
    int skipped = 0;
};

inline FdResult finite_difference_check(bool super, int t, LayerKind kind, int count, std::uint64_t seed) {
    const Denoiser net(net_config(super));
    const DenoiserParams init = net.initialize_random(seed, 1.0);
    const Problem pr = make_problem(super, t, seed + 1);
    const Denoiser::Input in{pr.x_t, double(t), pr.condition, pr.lowres};

    Denoiser::Cache cache;
    const DenoiserOutput out0 = net.forward(init.values, in, cache);
    const LossWithGrad lg = diffusion_loss(out0, pr.x0, pr.x_t, t, pr.eps, pr.weights, pr.schedule);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.parameter_count());
    net.backward(init.values, cache, lg.d_eps_hat, lg.d_v, grad);
    const Image mu_fixed = mu_from_eps(pr.x_t, t, out0.eps_hat, pr.schedule);
    const Image resid0 = predict_x0_raw(pr.x_t, t, out0.eps_hat, pr.schedule) - pr.x0;

    bool kink = false;
    auto objective = [&](const Eigen::VectorXd& p) {
        const DenoiserOutput o = net.forward(p, in);
        const double n = double(pr.x0.size());
        const double mse = (o.eps_hat - pr.eps).squaredNorm() / n;
        const Image resid = predict_x0_raw(pr.x_t, t, o.eps_hat, pr.schedule) - pr.x0;
        for (Eigen::Index i = 0; i < resid.size(); ++i) {
            if ((resid.data()[i] > 0) != (resid0.data()[i] > 0)) kink = true;
        }
        const double l1 = resid.cwiseAbs().sum() / n;
        const double vb = vb_detached(mu_fixed, o.v, pr.x0, pr.x_t, t, pr.schedule);
        return mse + pr.weights.lambda_vb * vb + pr.weights.lambda_l1 * l1;
    };

    std::vector<Eigen::Index> pool;
    for (const auto& e : init.manifest) {
        if (e.kind != kind) continue;
        for (Eigen::Index i = 0; i < e.slot.size(); ++i) pool.push_back(e.slot.offset + i);
    }
    Rng rng(seed + 2);
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() > std::size_t(count)) pool.resize(std::size_t(count));

    FdResult r;
    const double h = 1e-5;
    for (const Eigen::Index idx : pool) {
        Eigen::VectorXd p = init.values;
        kink = false;
        p[idx] += h;
        const double fp = objective(p);
        p[idx] -= 2.0 * h;
        const double fm = objective(p);
        if (kink) {
            ++r.skipped;
            continue;
        }
        const double num = (fp - fm) / (2.0 * h);
        const double ana = grad[idx];
        const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6});
        r.worst = std::max(r.worst, rel);
        ++r.checked;
    }
    return r;
}

} // namespace gradcheck
