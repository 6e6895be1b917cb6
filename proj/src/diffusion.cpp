#include "padkit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

namespace padkit {

std::string_view to_string(ScheduleKind kind) {
    return kind == ScheduleKind::linear ? "linear" : "cosine";
}

ScheduleKind schedule_kind_from_string(std::string_view name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine" || name == "squared_cosine" || name == "squared-cosine") return ScheduleKind::squared_cosine;
    throw InvalidParameter("unknown schedule kind '" + std::string(name) + "'");
}

ScheduleSpec make_schedule(ScheduleKind kind, int T) {
    if (T < 1) throw InvalidParameter("make_schedule: T must be >= 1");
    ScheduleSpec s;
    s.T = T;
    s.kind = kind;
    s.beta = Eigen::VectorXd::Zero(T + 1);
    if (kind == ScheduleKind::linear) {
        const double scale = 1000.0 / double(T);
        const double b0 = 1e-4 * scale;
        const double b1 = 0.02 * scale;
        for (int t = 1; t <= T; ++t) {
            const double frac = T == 1 ? 0.0 : double(t - 1) / double(T - 1);
            s.beta[t] = std::min(b0 + frac * (b1 - b0), kMaxBeta);
        }
    } else {
        auto f = [T](double t) {
            const double x = (t / double(T) + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0;
            return std::cos(x) * std::cos(x);
        };
        const double f0 = f(0.0);
        for (int t = 1; t <= T; ++t) {
            const double ab = f(double(t)) / f0;
            const double ab_prev = f(double(t - 1)) / f0;
            s.beta[t] = std::min(1.0 - ab / ab_prev, kMaxBeta);
        }
    }
    s.alpha = Eigen::VectorXd::Ones(T + 1) - s.beta;
    s.alpha_bar = Eigen::VectorXd::Ones(T + 1);
    for (int t = 1; t <= T; ++t) s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.beta_tilde = Eigen::VectorXd::Zero(T + 1);
    for (int t = 1; t <= T; ++t) {
        s.beta_tilde[t] = s.beta[t] * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
    }
    s.log_beta_tilde_clipped = Eigen::VectorXd::Zero(T + 1);
    for (int t = 2; t <= T; ++t) s.log_beta_tilde_clipped[t] = std::log(s.beta_tilde[t]);
    s.log_beta_tilde_clipped[1] = T >= 2 ? s.log_beta_tilde_clipped[2] : std::log(s.beta[1]);
    return s;
}

void write_schedule_csv(std::ostream& os, const ScheduleSpec& s) {
    os << "t,beta,alpha,alpha_bar,beta_tilde\n";
    std::ostringstream line;
    line.precision(17);
    for (int t = 1; t <= s.T; ++t) {
        line.str({});
        line << t << ',' << s.beta[t] << ',' << s.alpha[t] << ',' << s.alpha_bar[t] << ',' << s.beta_tilde[t] << '\n';
        os << line.str();
    }
}

double kl_gaussian(double mu_q, double var_q, double mu_p, double var_p) {
    if (!(var_q > 0.0) || !(var_p > 0.0)) throw InvalidParameter("kl_gaussian: variances must be positive");
    const double d = mu_p - mu_q;
    return 0.5 * (var_q / var_p + d * d / var_p - 1.0 + std::log(var_p / var_q));
}

LossWithGrad diffusion_loss(const DenoiserOutput& out, const Image& x0, const Image& x_t, int t, const Image& eps,
                            const LossWeights& weights, const ScheduleSpec& s) {
    s.check_t(t);
    require_same_shape(out.eps_hat, x0, "diffusion_loss");
    require_same_shape(out.v, x0, "diffusion_loss");
    require_same_shape(x_t, x0, "diffusion_loss");
    require_same_shape(eps, x0, "diffusion_loss");
    const double n = double(x0.size());
    LossWithGrad r;

    const Image diff = out.eps_hat - eps;
    r.terms.mse = diff.squaredNorm() / n;
    r.d_eps_hat = (2.0 / n) * diff;

    // Unclamped x0 estimate for the L1 term.
    const double ab = s.alpha_bar[t];
    const Image x0_hat = predict_x0_raw(x_t, t, out.eps_hat, s);
    const Image resid = x0_hat - x0;
    r.terms.l1 = resid.cwiseAbs().sum() / n;
    const double dx0_deps = -std::sqrt(1.0 - ab) / std::sqrt(ab);
    r.d_eps_hat += (weights.lambda_l1 * dx0_deps / n) * resid.unaryExpr([](double e) {
        return double((e > 0.0) - (e < 0.0));
    });

    // vb term: the model mean is a constant here (stop-gradient).
    const Image mu_p = mu_from_eps(x_t, t, out.eps_hat, s);
    const Image log_var_p = log_sigma_from_v(out.v, t, s);
    const auto var_p = log_var_p.array().exp();
    const double dlogvar_dv = std::log(s.beta[t]) - s.log_beta_tilde_clipped[t];
    Eigen::ArrayXXd dvb_dlogvar;
    if (t == 1) {
        const auto d2 = (x0 - mu_p).array().square();
        const Eigen::ArrayXXd nll = 0.5 * (std::log(2.0 * std::numbers::pi) + log_var_p.array() + d2 / var_p);
        r.terms.vb = nll.sum() / n;
        dvb_dlogvar = 0.5 * (1.0 - d2 / var_p);
    } else {
        const auto [mu_q, var_q] = posterior_mean_variance(x0, x_t, t, s);
        const auto d2 = (mu_q - mu_p).array().square();
        const Eigen::ArrayXXd kl = 0.5 * (var_q / var_p + d2 / var_p - 1.0 + log_var_p.array() - std::log(var_q));
        r.terms.vb = kl.sum() / n;
        dvb_dlogvar = 0.5 * (1.0 - var_q / var_p - d2 / var_p);
    }
    r.d_v = ((weights.lambda_vb * dlogvar_dv / n) * dvb_dlogvar).matrix();

    r.terms.total = r.terms.mse + weights.lambda_vb * r.terms.vb + weights.lambda_l1 * r.terms.l1;
    return r;
}

Image p_sample_step(const Image& x_t, int t, const DenoiserOutput& out, const ScheduleSpec& s, Rng& rng,
                    bool clip_denoised) {
    s.check_t(t);
    Image mu;
    if (clip_denoised) {
        mu = posterior_mean_variance(predict_x0(x_t, t, out.eps_hat, s), x_t, t, s).first;
    } else {
        mu = mu_from_eps(x_t, t, out.eps_hat, s);
    }
    if (t == 1) return mu;
    const Image sigma = sigma_from_v(out.v, t, s).cwiseSqrt();
    Image z(x_t.rows(), x_t.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = standard_normal(rng);
    return mu + sigma.cwiseProduct(z);
}

ImportanceState::ImportanceState(int T) : T_(T), history_(std::size_t(std::max(T, 0))) {
    if (T < 1) throw InvalidParameter("ImportanceState: T must be >= 1");
}

bool ImportanceState::warmed_up() const {
    return std::all_of(history_.begin(), history_.end(), [](const auto& h) { return h.size() >= kHistory; });
}

Eigen::VectorXd ImportanceState::probabilities() const {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(T_, 1.0 / double(T_));
    if (!warmed_up()) return p;
    for (int i = 0; i < T_; ++i) {
        double sq = 0.0;
        for (double l : history_[std::size_t(i)]) sq += l * l;
        p[i] = std::sqrt(sq / double(history_[std::size_t(i)].size()));
    }
    const double total = p.sum();
    if (!(total > 0.0) || !std::isfinite(total)) return Eigen::VectorXd::Constant(T_, 1.0 / double(T_));
    return p / total;
}

void ImportanceState::record(int t, double loss) {
    if (t < 1 || t > T_) throw IndexError("ImportanceState::record: timestep out of range");
    auto& h = history_[std::size_t(t - 1)];
    if (h.size() == kHistory) h.erase(h.begin());
    h.push_back(loss);
}

std::pair<int, double> ImportanceState::sample(Rng& rng) const {
    const Eigen::VectorXd p = probabilities();
    const double u = uniform01(rng);
    double acc = 0.0;
    int chosen = T_;
    for (int i = 0; i < T_; ++i) {
        acc += p[i];
        if (u < acc) {
            chosen = i + 1;
            break;
        }
    }
    while (p[chosen - 1] <= 0.0 && chosen > 1) --chosen;
    const double weight = warmed_up() ? 1.0 / (double(T_) * p[chosen - 1]) : 1.0;
    return {chosen, weight};
}

std::pair<int, double> importance_sample_t(const ImportanceState& state, Rng& rng) { return state.sample(rng); }

void ema_update(EmaState& state, const Eigen::VectorXd& params) {
    if (state.shadow.size() != params.size()) {
        throw ShapeError("ema_update: shadow has " + std::to_string(state.shadow.size()) + " entries, params " +
                         std::to_string(params.size()));
    }
    state.shadow = state.decay * state.shadow + (1.0 - state.decay) * params;
}

} // namespace padkit
