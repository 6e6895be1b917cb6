#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <string_view>
#include <utility>
#include <vector>

#include "padkit/error.hpp"
#include "padkit/imagekit.hpp"
#include "padkit/random.hpp"

namespace padkit {

enum class ScheduleKind { linear, squared_cosine };

std::string_view to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(std::string_view name);

/// Per-timestep diffusion constants. Vectors are indexed by t = 0..T; entry 0 holds
/// the alpha_bar_0 = 1 convention and is otherwise unused.
struct ScheduleSpec {
    int T = 0;
    ScheduleKind kind = ScheduleKind::linear;
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::VectorXd alpha_bar;
    Eigen::VectorXd beta_tilde;
    /// log(beta_tilde) with the t = 1 entry (log 0) replaced by the t = 2 value.
    Eigen::VectorXd log_beta_tilde_clipped;

    void check_t(int t) const {
        if (t < 1 || t > T) throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }
};

constexpr double kCosineOffset = 0.008;
constexpr double kMaxBeta = 0.999;

ScheduleSpec make_schedule(ScheduleKind kind, int T);

void write_schedule_csv(std::ostream& os, const ScheduleSpec& s);

// Closed-form forward and reverse-process maps. All are element-wise over images of any
// shape; `Derived` is any Eigen dense expression.

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename D1, typename D2>
typename D1::PlainObject q_sample(const Eigen::MatrixBase<D1>& x0, int t, const Eigen::MatrixBase<D2>& eps,
                                  const ScheduleSpec& s) {
    s.check_t(t);
    require_same_shape(x0, eps, "q_sample");
    const double ab = s.alpha_bar[t];
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

/// Unclamped clean-image estimate from a noise prediction.
template <typename D1, typename D2>
typename D1::PlainObject predict_x0_raw(const Eigen::MatrixBase<D1>& x_t, int t, const Eigen::MatrixBase<D2>& eps_hat,
                                        const ScheduleSpec& s) {
    s.check_t(t);
    require_same_shape(x_t, eps_hat, "predict_x0");
    const double ab = s.alpha_bar[t];
    return (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

/// Clean-image estimate clamped to the normalized domain [0, 1].
template <typename D1, typename D2>
typename D1::PlainObject predict_x0(const Eigen::MatrixBase<D1>& x_t, int t, const Eigen::MatrixBase<D2>& eps_hat,
                                    const ScheduleSpec& s) {
    return predict_x0_raw(x_t, t, eps_hat, s).cwiseMax(0.0).cwiseMin(1.0);
}

template <typename D1, typename D2>
std::pair<typename D1::PlainObject, double> posterior_mean_variance(const Eigen::MatrixBase<D1>& x0, const Eigen::MatrixBase<D2>& x_t,
                                                                    int t, const ScheduleSpec& s) {
    s.check_t(t);
    require_same_shape(x0, x_t, "posterior_mean_variance");
    const double ab = s.alpha_bar[t];
    const double ab_prev = s.alpha_bar[t - 1];
    const double c0 = std::sqrt(ab_prev) * s.beta[t] / (1.0 - ab);
    const double ct = std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
    return {(c0 * x0 + ct * x_t).eval(), s.beta_tilde[t]};
}

/// Reverse-process mean from a noise prediction.
template <typename D1, typename D2>
typename D1::PlainObject mu_from_eps(const Eigen::MatrixBase<D1>& x_t, int t, const Eigen::MatrixBase<D2>& eps_hat,
                                     const ScheduleSpec& s) {
    s.check_t(t);
    require_same_shape(x_t, eps_hat, "mu_from_eps");
    const double coef = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
    return (x_t - coef * eps_hat) / std::sqrt(s.alpha[t]);
}

/// Per-pixel log variance: v log(beta_t) + (1 - v) log(beta_tilde_t).
template <typename D>
typename D::PlainObject log_sigma_from_v(const Eigen::MatrixBase<D>& v, int t, const ScheduleSpec& s) {
    s.check_t(t);
    const double lb = std::log(s.beta[t]);
    const double lbt = s.log_beta_tilde_clipped[t];
    return (v.array() * lb + (1.0 - v.array()) * lbt).matrix();
}

template <typename D>
typename D::PlainObject sigma_from_v(const Eigen::MatrixBase<D>& v, int t, const ScheduleSpec& s) {
    return log_sigma_from_v(v, t, s).array().exp().matrix();
}

/// KL(N(mu_q, var_q) || N(mu_p, var_p)), scalar form.
double kl_gaussian(double mu_q, double var_q, double mu_p, double var_p);

/// Element-wise KL for images.
template <typename D1, typename D2, typename D3, typename D4>
typename D1::PlainObject kl_gaussian(const Eigen::MatrixBase<D1>& mu_q, const Eigen::MatrixBase<D2>& var_q,
                                     const Eigen::MatrixBase<D3>& mu_p, const Eigen::MatrixBase<D4>& var_p) {
    if ((var_q.array() <= 0.0).any() || (var_p.array() <= 0.0).any()) {
        throw InvalidParameter("kl_gaussian: variances must be positive");
    }
    const auto vq = var_q.array();
    const auto vp = var_p.array();
    const auto d = (mu_p - mu_q).array();
    return (0.5 * (vq / vp + d * d / vp - 1.0 + (vp / vq).log())).matrix();
}

using Image = GridMatrix<double>;

struct DenoiserOutput {
    Image eps_hat;
    Image v;
};

struct LossWeights {
    double lambda_vb = 1.0;
    double lambda_l1 = 0.03;

    static constexpr LossWeights base_phase() { return {1.0, 0.03}; }
    static constexpr LossWeights super_phase() { return {1.0, 0.02}; }
};

struct LossTerms {
    double total = 0.0;
    double mse = 0.0;
    double vb = 0.0;
    double l1 = 0.0;
};

/// Loss plus its gradient with respect to the two network outputs.
/// The vb term treats the reverse mean as a constant, so it only reaches `d_v`.
struct LossWithGrad {
    LossTerms terms;
    Image d_eps_hat;
    Image d_v;
};

LossWithGrad diffusion_loss(const DenoiserOutput& out, const Image& x0, const Image& x_t, int t, const Image& eps,
                            const LossWeights& weights, const ScheduleSpec& s);

/// One ancestral step. `clip_denoised` routes the mean through the clamped x0 estimate;
/// without clipping it equals mu_from_eps. No noise is added at t = 1.
Image p_sample_step(const Image& x_t, int t, const DenoiserOutput& out, const ScheduleSpec& s, Rng& rng,
                    bool clip_denoised = true);

/// Loss-aware timestep sampler keeping the last `kHistory` losses per timestep.
class ImportanceState {
  public:
    static constexpr std::size_t kHistory = 10;

    explicit ImportanceState(int T);

    [[nodiscard]] int T() const { return T_; }
    [[nodiscard]] bool warmed_up() const;
    /// Probabilities for t = 1..T (index 0 corresponds to t = 1).
    [[nodiscard]] Eigen::VectorXd probabilities() const;
    void record(int t, double loss);
    /// Returns (t, importance weight 1 / (T p_t)).
    std::pair<int, double> sample(Rng& rng) const;

    [[nodiscard]] const std::vector<std::vector<double>>& history() const { return history_; }

  private:
    int T_;
    std::vector<std::vector<double>> history_; // ring buffers, oldest first
};

std::pair<int, double> importance_sample_t(const ImportanceState& state, Rng& rng);

struct EmaState {
    double decay = 0.9999;
    Eigen::VectorXd shadow;
};

void ema_update(EmaState& state, const Eigen::VectorXd& params);

} // namespace padkit
