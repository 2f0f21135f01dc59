#include "sitstab/controller.hpp"

#include "sitstab/certkit.hpp"

#include <sstream>

namespace sitstab::controller {

FeedbackConfig make_feedback_config(const ModelParams& p, double theta, double alpha) {
  model::validate(p);
  if (!(alpha > 0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("backstepping weight alpha must be positive");
  }
  if (!(p.eta2 > 0)) {
    throw std::domain_error(
        "feedback design needs eta2 > 0: without a sterilized-female channel "
        "the release has no effect to exploit");
  }
  const double r = model::offspring_number_theta(p, theta);
  if (!(r < 1)) {
    std::ostringstream msg;
    msg << "theta below stabilization threshold: offspring number at theta=" << theta
        << " is " << r << " >= 1 (threshold " << model::theta_threshold(p) << ")";
    throw std::domain_error(msg.str());
  }

  FeedbackConfig cfg;
  cfg.theta = theta;
  cfg.alpha = alpha;
  cfg.R_theta = r;

  const double dEnE = p.nu_E + p.delta_E;
  const double k = p.eta1 * p.beta_E * p.nu * p.nu_E / (p.delta_F * dEnE);
  cfg.sigma = k * r / ((1 + theta) * p.eta2);
  cfg.phi = ((2 + r) * k - 3 * r * p.delta_eta()) / ((1 - r) * (1 + theta)) -
            k * r / ((1 + theta) * (1 + theta));
  cfg.Q = 3 * (p.eta2 + p.delta_Y) * (1 + theta) * dEnE * p.delta_F -
          (1 - r) * p.eta1 * p.beta_E * p.nu * p.nu_E;

  cfg.a_E = (1 + 2 * r) * p.nu * p.nu_E / (dEnE * (1 - r));
  cfg.a_M = p.nu;
  cfg.a_Y = 3 * r / (1 - r);
  cfg.a_F = (2 + r) * p.beta_E * p.nu * p.nu_E / (p.delta_F * dEnE * (1 - r));
  cfg.a_U = cfg.sigma;

  cfg.c = std::min({p.nu * dEnE * (1 - r) / (1 + 2 * r), p.delta_M,
                    p.delta_F * (1 - r) / (2 + r), p.delta_U,
                    k * (1 + theta * (1 - r)) * (1 - r) /
                        (3 * r * (1 + theta) * (1 + theta))});
  cfg.c1 = std::min(cfg.c, 1 / alpha);
  cfg.c2 = std::min(cfg.c, p.delta_M);
  cfg.c_prime = std::min(cfg.Q / (3 * (1 + theta) * p.delta_F * dEnE), p.delta_U);
  cfg.c_p = std::min({cfg.c, 1 / alpha, p.delta_M,
                      cfg.Q / (3 * (1 + theta) * p.delta_F * dEnE), p.delta_U});

  for (double v : {cfg.sigma, cfg.phi, cfg.Q, cfg.c, cfg.c1, cfg.c2, cfg.c_prime,
                   cfg.c_p, cfg.a_E, cfg.a_M, cfg.a_Y, cfg.a_F, cfg.a_U}) {
    if (!(v > 0) || !std::isfinite(v)) {
      throw std::domain_error("feedback configuration has a non-positive constant");
    }
  }
  return cfg;
}

double u_hat_lipschitz(const FeedbackConfig& cfg, const ModelParams& p) {
  return std::max(cfg.phi * (3 * cfg.theta + 1) / cfg.alpha,
                  4 * (1 - p.nu) * p.nu_E * cfg.theta);
}

double coupled_feedback_u_hat(const Vec6& x_hat, const Eigen::Vector2d& y,
                              const FeedbackConfig& cfg, const ModelParams& p) {
  if (!(y[0] >= 0) || !(y[1] >= 0)) {
    throw std::invalid_argument("measured male counts must be nonnegative");
  }
  Vec6 z = Vec6::Zero();
  z[model::iE] = std::max(0.0, x_hat[model::iE]);
  z[model::iY] = std::max(0.0, x_hat[model::iY]);
  z[model::iM] = y[0];
  z[model::iMs] = y[1];
  return feedback_u(z, cfg, p);
}

CoupledMonitorConfig make_coupled_monitor_config(const FeedbackConfig& cfg,
                                                 const ModelParams& p,
                                                 const Eigen::MatrixXd& P, double xi) {
  if (!(xi > 0)) throw std::invalid_argument("xi must be positive");
  const auto [evals, evecs] = certkit::sym_eigen(P);
  if (!(evals.minCoeff() > 0)) {
    throw std::domain_error("monitor needs a positive definite P");
  }
  CoupledMonitorConfig mon;
  mon.xi = xi;
  mon.beta_norm = 1 / std::sqrt(evals.minCoeff());
  mon.lipschitz_C = cfg.alpha * (3 * cfg.theta + 1) * u_hat_lipschitz(cfg, p);
  mon.lambda = 4 * mon.lipschitz_C * mon.beta_norm / xi;
  mon.c_s = std::min({cfg.c1, cfg.c2, xi / 4});
  mon.c_w = std::min(cfg.c_prime, xi / 2);
  mon.c_e = std::min({cfg.c1, cfg.c2, cfg.c_prime, xi / 4});
  return mon;
}

double lyapunov_H(const Vec6& x, const Vec6& x_hat, const Eigen::MatrixXd& P,
                  const CoupledMonitorConfig& mon, const FeedbackConfig& cfg) {
  const auto [evals, evecs] = certkit::sym_eigen(P);
  if (!(evals.minCoeff() > 0)) {
    throw std::domain_error("lyapunov_H needs a positive definite P");
  }
  const Eigen::VectorXd e = x_hat - x;
  const double energy = e.dot(P * e);
  return lyapunov_W(x, cfg) + mon.lambda * std::sqrt(std::max(0.0, energy));
}

}  // namespace sitstab::controller
