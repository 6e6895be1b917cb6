#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "padkit/diffusion.hpp"

using namespace padkit;

namespace {

Image random_image(Eigen::Index h, Eigen::Index w, Rng& rng, bool unit = false) {
    Image m(h, w);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unit ? uniform01(rng) : standard_normal(rng);
    return m;
}

} // namespace

TEST_CASE("linear schedule endpoints and invariants") {
    const ScheduleSpec s = make_schedule(ScheduleKind::linear, 1000);
    CHECK(s.beta[1] == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta[1000] == doctest::Approx(0.02).epsilon(1e-12));
    const ScheduleSpec s100 = make_schedule(ScheduleKind::linear, 100);
    CHECK(s100.beta[1] == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(s100.beta[100] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 0), InvalidParameter);
}

TEST_CASE("schedule invariants hold for both kinds") {
    for (ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::squared_cosine}) {
        for (int T : {1, 2, 10, 100, 1000}) {
            const ScheduleSpec s = make_schedule(kind, T);
            CHECK(s.alpha_bar[0] == 1.0);
            double prod = 1.0;
            for (int t = 1; t <= T; ++t) {
                CHECK(s.beta[t] > 0.0);
                CHECK(s.beta[t] < 1.0);
                CHECK(s.alpha[t] == 1.0 - s.beta[t]);
                CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
                prod *= s.alpha[t];
                CHECK(std::abs(s.alpha_bar[t] - prod) <= 1e-12 * prod);
                const double bt = s.beta[t] * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
                CHECK(s.beta_tilde[t] == doctest::Approx(bt).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("squared-cosine schedule follows its closed form") {
    const int T = 1000;
    const ScheduleSpec s = make_schedule(ScheduleKind::squared_cosine, T);
    auto f = [](double u) {
        const double c = std::cos((u + 0.008) / 1.008 * std::acos(-1.0) / 2.0);
        return c * c;
    };
    for (int t : {1, 10, 500, 900}) {
        const double expect = 1.0 - f(double(t) / T) / f(double(t - 1) / T);
        CHECK(s.beta[t] == doctest::Approx(std::min(expect, 0.999)).epsilon(1e-12));
    }
    CHECK(s.beta[T] <= 0.999);
    CHECK(schedule_kind_from_string("cosine") == ScheduleKind::squared_cosine);
    CHECK(schedule_kind_from_string("squared_cosine") == ScheduleKind::squared_cosine);
    CHECK(schedule_kind_from_string("linear") == ScheduleKind::linear);
    CHECK_THROWS_AS(schedule_kind_from_string("quadratic"), InvalidParameter);
}

TEST_CASE("schedule CSV has one row per timestep") {
    std::ostringstream os;
    write_schedule_csv(os, make_schedule(ScheduleKind::squared_cosine, 100));
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "t,beta,alpha,alpha_bar,beta_tilde");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 100);
}

TEST_CASE("forward sampling") {
    ScheduleSpec s = make_schedule(ScheduleKind::linear, 10);
    s.alpha_bar[3] = 0.25;
    const Image x0 = Image::Ones(4, 4);
    CHECK(q_sample(x0, 3, Image::Zero(4, 4), s).isApproxToConstant(0.5, 1e-15));
    const ScheduleSpec lin = make_schedule(ScheduleKind::linear, 1000);
    Rng rng(1);
    const Image x = random_image(4, 4, rng, true);
    CHECK((q_sample(x, 1, random_image(4, 4, rng), lin) - x).cwiseAbs().maxCoeff() < 0.05);
    CHECK_THROWS_AS(q_sample(x, 0, x, lin), IndexError);
    CHECK_THROWS_AS(q_sample(x, 1001, x, lin), IndexError);
    CHECK_THROWS_AS(q_sample(x, 5, Image::Zero(3, 4), lin), ShapeError);
}

TEST_CASE("q_sample moments by Monte Carlo") {
    const ScheduleSpec s = make_schedule(ScheduleKind::linear, 100);
    const int t = 50;
    Rng rng(42);
    const int n = 20000;
    Image eps(1, n);
    for (int i = 0; i < n; ++i) eps(0, i) = standard_normal(rng);
    const Image xt = q_sample(Image::Ones(1, n), t, eps, s);
    const double mean = xt.mean();
    const double var = (xt.array() - mean).square().sum() / n;
    const double se = std::sqrt((1.0 - s.alpha_bar[t]) / n);
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar[t])) < 4.0 * se);
    CHECK(std::abs(var - (1.0 - s.alpha_bar[t])) < 0.05 * (1.0 - s.alpha_bar[t]));
}

TEST_CASE("clean-image estimate") {
    ScheduleSpec s = make_schedule(ScheduleKind::linear, 10);
    s.alpha_bar[4] = 0.25;
    CHECK(predict_x0(Image::Constant(2, 2, 0.5), 4, Image::Zero(2, 2), s).isApproxToConstant(1.0, 1e-15));
    // Raw estimate 1.7 clamps to 1.
    const double eps = (0.5 - 1.7 * 0.5) / std::sqrt(0.75);
    CHECK(predict_x0_raw(Image::Constant(1, 1, 0.5), 4, Image::Constant(1, 1, eps), s)(0, 0) ==
          doctest::Approx(1.7).epsilon(1e-12));
    CHECK(predict_x0(Image::Constant(1, 1, 0.5), 4, Image::Constant(1, 1, eps), s)(0, 0) == 1.0);

    const ScheduleSpec lin = make_schedule(ScheduleKind::linear, 1000);
    Rng rng(2);
    for (int t : {1, 10, 500, 1000}) {
        const Image x0 = random_image(8, 8, rng, true);
        const Image e = random_image(8, 8, rng);
        const Image back = predict_x0_raw(q_sample(x0, t, e, lin), t, e, lin);
        CHECK((back - x0).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("posterior mean and variance") {
    const ScheduleSpec s = make_schedule(ScheduleKind::squared_cosine, 100);
    Rng rng(3);
    const Image x0 = random_image(4, 4, rng, true);
    const Image xt = random_image(4, 4, rng);
    const auto [mu1, var1] = posterior_mean_variance(x0, xt, 1, s);
    CHECK((mu1 - x0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(var1 == s.beta_tilde[1]);
    CHECK(s.beta_tilde[1] == 0.0);

    // With zero noise, x_{t-1} on the deterministic path is sqrt(abar_{t-1}) x0.
    const int t = 40;
    const Image xt0 = q_sample(x0, t, Image::Zero(4, 4), s);
    const auto [mu, var] = posterior_mean_variance(x0, xt0, t, s);
    CHECK((mu - std::sqrt(s.alpha_bar[t - 1]) * x0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(var == s.beta_tilde[t]);

    for (int tt = 1; tt <= 100; ++tt) {
        const Image e = random_image(4, 4, rng);
        const Image x = q_sample(x0, tt, e, s);
        CHECK((mu_from_eps(x, tt, e, s) - posterior_mean_variance(x0, x, tt, s).first).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("mean from noise prediction") {
    const ScheduleSpec s = make_schedule(ScheduleKind::linear, 50);
    Rng rng(4);
    const Image x = random_image(3, 3, rng);
    CHECK((mu_from_eps(x, 7, Image::Zero(3, 3), s) - x / std::sqrt(s.alpha[7])).cwiseAbs().maxCoeff() < 1e-14);
    const Image e1 = random_image(3, 3, rng), e2 = random_image(3, 3, rng);
    const double a = 0.3, b = 0.7; // a + b = 1 keeps the affine map's offset
    const Image lhs = mu_from_eps(x, 7, (a * e1 + b * e2).eval(), s);
    const Image rhs = a * mu_from_eps(x, 7, e1, s) + b * mu_from_eps(x, 7, e2, s);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("learned variance interpolation") {
    const ScheduleSpec s = make_schedule(ScheduleKind::linear, 100);
    const int t = 30;
    CHECK(sigma_from_v(Image::Ones(1, 1), t, s)(0, 0) == doctest::Approx(s.beta[t]).epsilon(1e-14));
    CHECK(sigma_from_v(Image::Zero(1, 1), t, s)(0, 0) == doctest::Approx(s.beta_tilde[t]).epsilon(1e-14));
    CHECK(sigma_from_v(Image::Constant(1, 1, 0.5), t, s)(0, 0) ==
          doctest::Approx(std::sqrt(s.beta[t] * s.beta_tilde[t])).epsilon(1e-14));
    // beta_tilde_1 = 0 is replaced by beta_tilde_2 inside the log.
    CHECK(std::isfinite(log_sigma_from_v(Image::Zero(1, 1), 1, s)(0, 0)));
    CHECK(sigma_from_v(Image::Zero(1, 1), 1, s)(0, 0) == doctest::Approx(s.beta_tilde[2]).epsilon(1e-14));
}

TEST_CASE("gaussian KL") {
    CHECK(kl_gaussian(0.3, 2.0, 0.3, 2.0) == 0.0);
    CHECK(kl_gaussian(0.0, 1.0, 1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double k = kl_gaussian(standard_normal(rng), 0.01 + uniform01(rng), standard_normal(rng), 0.01 + uniform01(rng));
        CHECK(k >= 0.0);
    }
    CHECK_THROWS_AS(kl_gaussian(0.0, 0.0, 0.0, 1.0), InvalidParameter);
    CHECK_THROWS_AS(kl_gaussian(Image::Zero(1, 1), Image::Ones(1, 1), Image::Zero(1, 1), Image::Zero(1, 1)),
                    InvalidParameter);
}

namespace {

struct LossFixture {
    ScheduleSpec s = make_schedule(ScheduleKind::squared_cosine, 100);
    Image x0, eps, xt;
    DenoiserOutput out;
    int t = 37;

    explicit LossFixture(int tt, std::uint64_t seed = 9) : t(tt) {
        Rng rng(seed);
        x0 = random_image(4, 4, rng, true);
        eps = random_image(4, 4, rng);
        xt = q_sample(x0, t, eps, s);
        out.eps_hat = eps + 0.3 * random_image(4, 4, rng);
        out.v = random_image(4, 4, rng, true);
    }
};

constexpr double kRound = std::numeric_limits<double>::epsilon();

// vb evaluated with the model mean held at the fixture's eps_hat.
double vb_detached(const LossFixture& f, const Image& v) {
    const DenoiserOutput o{f.out.eps_hat, v};
    return diffusion_loss(o, f.x0, f.xt, f.t, f.eps, {1.0, 0.0}, f.s).terms.vb;
}

} // namespace

TEST_CASE("loss terms at the exact noise") {
    LossFixture f(20);
    f.out.eps_hat = f.eps;
    const auto l = diffusion_loss(f.out, f.x0, f.xt, f.t, f.eps, LossWeights::base_phase(), f.s);
    CHECK(l.terms.mse == 0.0);
    CHECK(l.terms.l1 < 1e-12);
    CHECK(LossWeights::base_phase().lambda_l1 == 0.03);
    CHECK(LossWeights::super_phase().lambda_l1 == 0.02);
    CHECK(LossWeights::base_phase().lambda_vb == 1.0);
    CHECK(l.terms.total == doctest::Approx(l.terms.mse + l.terms.vb + 0.03 * l.terms.l1));
}

TEST_CASE("loss gradients match central differences") {
    for (int t : {1, 2, 37, 100}) {
        LossFixture f(t);
        const LossWeights w{1.0, 0.03};
        const auto l = diffusion_loss(f.out, f.x0, f.xt, f.t, f.eps, w, f.s);
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < f.x0.size(); ++i) {
            // eps_hat: mse + l1 only (vb is detached from the mean).
            DenoiserOutput p = f.out, m = f.out;
            p.eps_hat.data()[i] += h;
            m.eps_hat.data()[i] -= h;
            auto non_vb = [&](const DenoiserOutput& o) {
                const auto lt = diffusion_loss(o, f.x0, f.xt, f.t, f.eps, w, f.s).terms;
                return lt.mse + w.lambda_l1 * lt.l1;
            };
            const double num = (non_vb(p) - non_vb(m)) / (2 * h);
            // Relative agreement plus the rounding floor of the difference quotient.
            const double floor_eps = 50.0 * kRound * std::abs(non_vb(f.out)) / h;
            CHECK(std::abs(l.d_eps_hat.data()[i] - num) <= 1e-6 * std::abs(num) + floor_eps);

            Image vp = f.out.v, vm = f.out.v;
            vp.data()[i] += h;
            vm.data()[i] -= h;
            const double numv = (vb_detached(f, vp) - vb_detached(f, vm)) / (2 * h);
            const double floor_v = 50.0 * kRound * std::abs(vb_detached(f, f.out.v)) / h;
            CHECK(std::abs(l.d_v.data()[i] - numv) <= 1e-6 * std::abs(numv) + floor_v);
        }
    }
}

TEST_CASE("vb gradient never reaches eps_hat") {
    LossFixture f(50);
    const auto only_vb = diffusion_loss(f.out, f.x0, f.xt, f.t, f.eps, {1.0, 0.0}, f.s);
    const auto no_vb = diffusion_loss(f.out, f.x0, f.xt, f.t, f.eps, {0.0, 0.0}, f.s);
    CHECK(only_vb.d_eps_hat == no_vb.d_eps_hat);
    CHECK(no_vb.d_v.isZero());
}

TEST_CASE("reverse step") {
    const ScheduleSpec s = make_schedule(ScheduleKind::linear, 100);
    Rng rng(6);
    const Image x = random_image(4, 4, rng);
    DenoiserOutput out{random_image(4, 4, rng), Image::Constant(4, 4, 0.5)};
    Rng a(1), b(1);
    CHECK(p_sample_step(x, 1, out, s, a, false) == mu_from_eps(x, 1, out.eps_hat, s));
    CHECK(p_sample_step(x, 60, out, s, a) == p_sample_step(x, 60, out, s, b));
    const Image clipped = p_sample_step(x, 1, out, s, a, true);
    CHECK(clipped == posterior_mean_variance(predict_x0(x, 1, out.eps_hat, s), x, 1, s).first);
}

TEST_CASE("importance sampling") {
    ImportanceState st(4);
    CHECK_FALSE(st.warmed_up());
    CHECK(st.probabilities().isApproxToConstant(0.25));
    for (int t = 1; t <= 4; ++t) {
        for (int k = 0; k < 12; ++k) st.record(t, 3.0);
    }
    CHECK(st.warmed_up());
    CHECK(st.history()[0].size() == ImportanceState::kHistory);
    CHECK(st.probabilities().isApproxToConstant(0.25, 1e-15));
    CHECK_THROWS_AS(st.record(5, 1.0), IndexError);

    ImportanceState toy(2);
    for (int k = 0; k < 10; ++k) {
        toy.record(1, 1.0);
        toy.record(2, 2.0);
    }
    const Eigen::VectorXd p = toy.probabilities();
    CHECK(p[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    // Weighted estimator of the mean loss is unbiased against uniform sampling.
    Rng rng(8);
    double acc = 0.0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) {
        const auto [t, w] = importance_sample_t(toy, rng);
        acc += w * (t == 1 ? 1.0 : 2.0);
    }
    CHECK(std::abs(acc / draws - 1.5) / 1.5 < 0.01);
}

TEST_CASE("EMA update") {
    EmaState e{0.0, Eigen::VectorXd::Zero(3)};
    ema_update(e, Eigen::VectorXd::Constant(3, 2.0));
    CHECK(e.shadow.isApproxToConstant(2.0));
    EmaState slow{0.9999, Eigen::VectorXd::Zero(1)};
    ema_update(slow, Eigen::VectorXd::Ones(1));
    CHECK(slow.shadow[0] == doctest::Approx(1e-4).epsilon(1e-12));
    EmaState mono{0.9, Eigen::VectorXd::Zero(1)};
    double prev = 0.0;
    for (int i = 0; i < 100; ++i) {
        ema_update(mono, Eigen::VectorXd::Constant(1, 5.0));
        CHECK(mono.shadow[0] > prev);
        CHECK(mono.shadow[0] <= 5.0);
        prev = mono.shadow[0];
    }
    CHECK_THROWS_AS(ema_update(mono, Eigen::VectorXd::Zero(2)), ShapeError);
}
