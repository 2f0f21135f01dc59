#include <doctest.h>

#include "sitstab/controller.hpp"
#include "sitstab/model.hpp"

#include <cmath>
#include <random>

using namespace sitstab;

namespace {

model::ModelParams baseline() {
  model::ModelParams p{};
  p.beta_E = 10;
  p.nu_E = 0.05;
  p.delta_E = 0.03;
  p.delta_M = 0.1;
  p.delta_Y = 0.04;
  p.delta_F = 0.04;
  p.delta_U = 0.04;
  p.delta_s = 0.12;
  p.nu = 0.49;
  p.eta1 = 1;
  p.eta2 = 0.7;
  p.K = 21000;
  return p;
}

// Directional derivative of V along the field with the sterile-male count
// replaced by theta*M, written out term by term. Derived independently of
// feedback_G, so the closed-loop identity below cross-checks both.
double grad_v_dot_f_manifold(const model::Vec5& x5, const controller::FeedbackConfig& cfg,
                             const model::ModelParams& p) {
  const double E = x5[0], M = x5[1], Y = x5[2], F = x5[3], U = x5[4];
  const double dEnE = p.nu_E + p.delta_E;
  const double k = p.eta1 * p.beta_E * p.nu * p.nu_E / (p.delta_F * dEnE);
  const double r = cfg.R_theta;
  double out = -(p.beta_E * p.nu * p.nu_E / dEnE) * F - p.nu * p.delta_M * M -
               p.nu * p.nu * p.nu_E * E -
               k * (1 + cfg.theta * (1 - r)) / ((1 + cfg.theta) * (1 + cfg.theta)) * Y -
               cfg.sigma * p.delta_U * U;
  if (p.finite_capacity()) out -= cfg.a_E * (p.beta_E / *p.K) * F * E;
  return out;
}

}  // namespace

TEST_CASE("feedback constants match their defining formulas") {
  const auto p = baseline();
  const auto cfg = controller::make_feedback_config(p, 290, 90);

  CHECK(cfg.R_theta == doctest::Approx(0.35504776479317381).epsilon(1e-13));
  CHECK(cfg.sigma == doctest::Approx(0.13344793565035528).epsilon(1e-13));
  CHECK(cfg.phi == doctest::Approx(0.95869298398080260).epsilon(1e-13));
  CHECK(cfg.Q == doctest::Approx(1.9092507023743276).epsilon(1e-12));
  CHECK(cfg.a_E == doctest::Approx(0.81202409627725549).epsilon(1e-13));
  CHECK(cfg.a_M == 0.49);
  CHECK(cfg.a_Y == doctest::Approx(1.6515072531502220).epsilon(1e-13));
  CHECK(cfg.a_F == doctest::Approx(279.56852406931387).epsilon(1e-13));
  CHECK(cfg.a_U == cfg.sigma);
  CHECK(cfg.c == doctest::Approx(0.010954380541211104).epsilon(1e-13));
  CHECK(cfg.c1 == cfg.c);  // 1/alpha = 1/90 exceeds c
  CHECK(cfg.c2 == cfg.c);  // delta_M exceeds c
  CHECK(cfg.c_prime == doctest::Approx(0.04).epsilon(1e-13));
  CHECK(cfg.c_p == cfg.c);

  CHECK(controller::u_hat_lipschitz(cfg, p) == doctest::Approx(29.58).epsilon(1e-13));
}

TEST_CASE("feedback configuration rejects designs that cannot stabilize") {
  const auto p = baseline();
  // Below the threshold the offspring number stays >= 1.
  CHECK_THROWS_AS(controller::make_feedback_config(p, 100, 90), std::domain_error);
  CHECK_THROWS_AS(controller::make_feedback_config(p, model::theta_threshold(p), 90),
                  std::domain_error);
  CHECK_NOTHROW(controller::make_feedback_config(p, model::theta_threshold(p) + 1e-6, 90));

  CHECK_THROWS_AS(controller::make_feedback_config(p, 290, 0), std::invalid_argument);
  CHECK_THROWS_AS(controller::make_feedback_config(p, 290, -2), std::invalid_argument);

  auto no_transfer = p;
  no_transfer.eta2 = 0;
  CHECK_THROWS_AS(controller::make_feedback_config(no_transfer, 290, 90),
                  std::domain_error);
}

TEST_CASE("raw law on the tracking manifold and at the reference start") {
  const auto p = baseline();
  const auto cfg = controller::make_feedback_config(p, 290, 90);

  // On E = Y = 0 with Ms = theta*M the law reduces to theta*M*(delta_s - delta_M).
  for (double m : {1.0, 7.5, 2000.0}) {
    model::Vec6 x;
    x << 0, m, 0, 3.0, 11.0, cfg.theta * m;
    const double expected = cfg.theta * m * (p.delta_s - p.delta_M);
    CHECK(controller::feedback_G(x, cfg, p) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  model::Vec6 x0;
  x0 << 20700, 5300, 1500, 13000, 0, 0;
  CHECK(controller::feedback_u(x0, cfg, p) ==
        doctest::Approx(18414.505363080182).epsilon(1e-12));

  // Male-free face: the law vanishes by the selection convention.
  model::Vec6 face;
  face << 100, 0, 50, 20, 10, 0;
  CHECK(controller::feedback_G(face, cfg, p) == 0.0);

  // The clamp engages exactly when the raw law is negative.
  const auto cfg1 = controller::make_feedback_config(p, 290, 1);
  model::Vec6 neg;
  neg << 0, 0, 0, 0, 0, 1;
  CHECK(controller::feedback_G(neg, cfg1, p) ==
        doctest::Approx(p.delta_s - 1.0).epsilon(1e-12));
  CHECK(controller::feedback_u(neg, cfg1, p) == 0.0);
}

TEST_CASE("raw law is positively 1-homogeneous, hence continuous at the origin") {
  const auto p = baseline();
  const auto cfg = controller::make_feedback_config(p, 290, 90);
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> mag(0.0, 1e4);
  for (int i = 0; i < 200; ++i) {
    model::Vec6 x;
    for (int j = 0; j < 6; ++j) x[j] = mag(rng);
    if (x[model::iM] + x[model::iMs] == 0) x[model::iM] = 1;
    const double g = controller::feedback_G(x, cfg, p);
    for (double s : {1e-8, 0.5, 7.0, 1e6}) {
      const model::Vec6 xs = s * x;
      CHECK(controller::feedback_G(xs, cfg, p) ==
            doctest::Approx(s * g).epsilon(1e-10));
    }
  }
}

TEST_CASE("output law is Lipschitz in the estimated aquatic states") {
  const auto p = baseline();
  const auto cfg = controller::make_feedback_config(p, 290, 90);
  const double C = controller::u_hat_lipschitz(cfg, p);
  std::mt19937 rng(37);
  std::uniform_real_distribution<double> mag(0.0, 1e5);
  std::uniform_real_distribution<double> est(-1e4, 1e5);
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector2d y(mag(rng), mag(rng));
    if (y.sum() == 0) y[0] = 1;
    model::Vec6 a = model::Vec6::Zero(), b = model::Vec6::Zero();
    a[model::iE] = est(rng);
    a[model::iY] = est(rng);
    b[model::iE] = est(rng);
    b[model::iY] = est(rng);
    const double ua = controller::coupled_feedback_u_hat(a, y, cfg, p);
    const double ub = controller::coupled_feedback_u_hat(b, y, cfg, p);
    const double bound = C * (std::abs(a[model::iE] - b[model::iE]) +
                              std::abs(a[model::iY] - b[model::iY]));
    CHECK(std::abs(ua - ub) <= bound * (1 + 1e-9) + 1e-9);
  }
}

TEST_CASE("output law clamps estimates and rejects negative measurements") {
  const auto p = baseline();
  const auto cfg = controller::make_feedback_config(p, 290, 90);
  model::Vec6 xh;
  xh << -5, 99, -3, 42, 17, 99;  // estimated M, Ms are ignored; y is used
  const Eigen::Vector2d y(10, 20);
  model::Vec6 z = model::Vec6::Zero();
  z[model::iM] = 10;
  z[model::iMs] = 20;
  CHECK(controller::coupled_feedback_u_hat(xh, y, cfg, p) ==
        controller::feedback_u(z, cfg, p));

  xh[model::iE] = 300;
  z[model::iE] = 300;
  CHECK(controller::coupled_feedback_u_hat(xh, y, cfg, p) ==
        controller::feedback_u(z, cfg, p));

  CHECK_THROWS_AS(controller::coupled_feedback_u_hat(xh, {-1, 5}, cfg, p),
                  std::invalid_argument);
}

TEST_CASE("directional derivative of V along the pressured field") {
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> mag(0.0, 1e5);
  for (const bool unbounded : {false, true}) {
    auto p = baseline();
    if (unbounded) p.K.reset();
    for (const auto& [theta, alpha] :
         std::vector<std::pair<double, double>>{{290, 90}, {150, 10}, {103, 1}}) {
      const auto cfg = controller::make_feedback_config(p, theta, alpha);
      const model::Vec5 a(cfg.a_E, cfg.a_M, cfg.a_Y, cfg.a_F, cfg.a_U);
      for (int i = 0; i < 100; ++i) {
        model::Vec6 x;
        for (int j = 0; j < 6; ++j) x[j] = mag(rng);
        x[model::iM] += 1e-6;
        x[model::iMs] = theta * x[model::iM];  // exact proportional pressure
        const model::Vec6 f = model::rhs_controlled(x, 0.0, p);
        const double lhs = a.dot(f.head<5>());
        const double rhs = grad_v_dot_f_manifold(x.head<5>(), cfg, p);
        const double scale = std::abs(lhs) + std::abs(rhs) + 1;
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10).scale(scale));
      }
    }
  }
}

TEST_CASE("closed-loop derivative of W while the clamp is inactive") {
  std::mt19937 rng(43);
  std::uniform_real_distribution<double> mag(0.0, 1e5);
  for (const bool unbounded : {false, true}) {
    auto p = baseline();
    if (unbounded) p.K.reset();
    for (const auto& [theta, alpha] :
         std::vector<std::pair<double, double>>{{290, 90}, {150, 10}, {500, 400}}) {
      const auto cfg = controller::make_feedback_config(p, theta, alpha);
      const model::Vec5 a(cfg.a_E, cfg.a_M, cfg.a_Y, cfg.a_F, cfg.a_U);
      int used = 0;
      while (used < 100) {
        model::Vec6 x;
        for (int j = 0; j < 6; ++j) x[j] = mag(rng);
        if (x[model::iM] + x[model::iMs] == 0) continue;
        const double g = controller::feedback_G(x, cfg, p);
        if (!(g > 0)) continue;
        ++used;

        // Chain rule: W = V + alpha*(theta*M - Ms)^2/(theta*M + Ms), with the
        // release running at the raw law value.
        const model::Vec6 f = model::rhs_controlled(x, g, p);
        const double M = x[model::iM], Ms = x[model::iMs];
        const double s = cfg.theta * M + Ms;
        const double d = cfg.theta * M - Ms;
        const double dWdM = cfg.alpha * cfg.theta * d * (cfg.theta * M + 3 * Ms) / (s * s);
        const double dWdMs = -cfg.alpha * d * (3 * cfg.theta * M + Ms) / (s * s);
        const double lhs =
            a.dot(f.head<5>()) + dWdM * f[model::iM] + dWdMs * f[model::iMs];

        const double rhs = grad_v_dot_f_manifold(x.head<5>(), cfg, p) -
                           d * d * (3 * cfg.theta * M + Ms) / (s * s);
        const double scale = std::abs(lhs) + std::abs(rhs) + 1;
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8).scale(scale));
      }
    }
  }
}

TEST_CASE("W dominates V and collapses to it on the manifold") {
  const auto p = baseline();
  const auto cfg = controller::make_feedback_config(p, 290, 90);
  std::mt19937 rng(47);
  std::uniform_real_distribution<double> mag(0.0, 1e5);
  for (int i = 0; i < 300; ++i) {
    model::Vec6 x;
    for (int j = 0; j < 6; ++j) x[j] = mag(rng);
    const double v = controller::lyapunov_V(x.head<5>(), cfg);
    const double w = controller::lyapunov_W(x, cfg);
    CHECK(w >= v);

    model::Vec6 on = x;
    on[model::iMs] = cfg.theta * on[model::iM];
    CHECK(controller::lyapunov_W(on, cfg) ==
          doctest::Approx(controller::lyapunov_V(on.head<5>(), cfg)).epsilon(1e-12));
  }
  // Male-free face: the tracking penalty is absent by convention.
  model::Vec6 face;
  face << 5, 0, 3, 2, 1, 0;
  CHECK(controller::lyapunov_W(face, cfg) ==
        controller::lyapunov_V(face.head<5>(), cfg));
}

TEST_CASE("phi and Q stay positive across random stabilizable designs") {
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) {
    return lo * std::exp(unit(rng) * std::log(hi / lo));
  };
  int accepted = 0, attempts = 0;
  while (accepted < 1000 && ++attempts < 100000) {
    model::ModelParams p{};
    p.beta_E = log_uniform(0.01, 20);
    p.nu_E = log_uniform(0.01, 2);
    p.delta_E = log_uniform(0.01, 2);
    p.delta_M = log_uniform(0.01, 2);
    p.delta_Y = log_uniform(0.01, 2);
    p.delta_F = log_uniform(0.01, 2);
    p.delta_U = log_uniform(0.01, 2);
    p.delta_s = p.delta_M * (1 + unit(rng));
    p.nu = 0.05 + 0.9 * unit(rng);
    p.eta2 = log_uniform(0.01, 2);
    p.eta1 = p.eta2 * (1 + 2 * unit(rng));
    p.K = unit(rng) < 0.5 ? std::optional<double>(log_uniform(100, 1e5)) : std::nullopt;
    if (model::basic_offspring_number(p) <= 1.02) continue;
    const double tstar = model::theta_threshold(p);
    REQUIRE(tstar > 0);
    const double theta = tstar * (1.01 + 5 * unit(rng));
    const double alpha = log_uniform(0.1, 1000);
    controller::FeedbackConfig cfg;
    REQUIRE_NOTHROW(cfg = controller::make_feedback_config(p, theta, alpha));
    CHECK(cfg.phi > 0);
    CHECK(cfg.Q > 0);
    CHECK(cfg.R_theta < 1);
    CHECK(cfg.c > 0);
    CHECK(cfg.c_p > 0);
    ++accepted;
  }
  CHECK(accepted == 1000);
}

TEST_CASE("coupled monitor constants and the combined functional") {
  const auto p = baseline();
  const auto cfg = controller::make_feedback_config(p, 290, 90);
  const Eigen::MatrixXd I6 = Eigen::MatrixXd::Identity(6, 6);

  const auto mon = controller::make_coupled_monitor_config(cfg, p, I6, 1.0);
  CHECK(mon.beta_norm == doctest::Approx(1.0));
  CHECK(mon.lipschitz_C == doctest::Approx(2318776.2).epsilon(1e-12));
  CHECK(mon.lambda == doctest::Approx(4 * 2318776.2).epsilon(1e-12));
  CHECK(mon.c_s == doctest::Approx(cfg.c).epsilon(1e-13));
  CHECK(mon.c_w == doctest::Approx(0.04).epsilon(1e-13));
  CHECK(mon.c_e == doctest::Approx(cfg.c).epsilon(1e-13));
  CHECK(mon.xi == 1.0);

  // Larger xi relaxes nothing but the error weight; the rate caps kick in.
  const auto mon_tight = controller::make_coupled_monitor_config(cfg, p, I6, 0.02);
  CHECK(mon_tight.c_s == doctest::Approx(0.005).epsilon(1e-13));
  CHECK(mon_tight.c_w == doctest::Approx(0.01).epsilon(1e-13));
  CHECK(mon_tight.c_e == doctest::Approx(0.005).epsilon(1e-13));

  model::Vec6 x, xh;
  x << 10, 20, 30, 40, 50, 60;
  xh << 11, 22, 33, 44, 55, 66;
  const Eigen::MatrixXd P4 = 4 * I6;
  const auto mon4 = controller::make_coupled_monitor_config(cfg, p, P4, 1.0);
  const double expected = controller::lyapunov_W(x, cfg) +
                          mon4.lambda * 2 * (xh - x).norm();
  CHECK(controller::lyapunov_H(x, xh, P4, mon4, cfg) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(controller::lyapunov_H(x, x, P4, mon4, cfg) ==
        doctest::Approx(controller::lyapunov_W(x, cfg)).epsilon(1e-12));

  CHECK_THROWS_AS(controller::make_coupled_monitor_config(cfg, p, -I6, 1.0),
                  std::domain_error);
  CHECK_THROWS_AS(controller::make_coupled_monitor_config(cfg, p, I6, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(controller::lyapunov_H(x, xh, -I6, mon4, cfg), std::domain_error);
}
