#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sitstab/model.hpp"

namespace sitstab::controller {

using model::ModelParams;
using model::Vec5;
using model::Vec6;

// Release ratio theta, backstepping weight alpha, and every derived constant
// of the feedback design. All cached values are strictly positive for a
// valid configuration.
struct FeedbackConfig {
  double theta = 0;
  double alpha = 0;

  double R_theta = 0;  // offspring number under pressure theta, < 1
  double sigma = 0;
  double phi = 0;
  double Q = 0;
  double c = 0;        // decay rate of V under the proportional law
  double c1 = 0;       // min(c, 1/alpha)
  double c2 = 0;       // min(c, delta_M)
  double c_prime = 0;
  double c_p = 0;      // closed-loop decay rate of W

  // Weights of the linear Lyapunov functional V over (E, M, Y, F, U).
  double a_E = 0, a_M = 0, a_Y = 0, a_F = 0, a_U = 0;
};

// Derives all feedback constants. Requires offspring_number_theta(p, theta)
// < 1 (throws std::domain_error otherwise), alpha > 0, and eta2 > 0 (the
// sterilized-female channel is what the design exploits; sigma is undefined
// without it).
FeedbackConfig make_feedback_config(const ModelParams& p, double theta, double alpha);

// Lipschitz constant of the output-feedback law in (E, Y) for fixed
// measured males: |u_hat(a) - u_hat(b)| <= C * (|Ea-Eb| + |Ya-Yb|).
double u_hat_lipschitz(const FeedbackConfig& cfg, const ModelParams& p);

// Raw (unclamped) backstepping law. Depends only on (E, M, Y, Ms); F and U
// do not enter. Defined as 0 on the male-free face M+Ms = 0. Positively
// 1-homogeneous in the state.
template <class D>
typename D::Scalar feedback_G(const Eigen::MatrixBase<D>& x, const FeedbackConfig& cfg,
                              const ModelParams& p) {
  using Scalar = typename D::Scalar;
  const Scalar E = x[model::iE], M = x[model::iM], Y = x[model::iY], Ms = x[model::iMs];
  if constexpr (std::is_same_v<Scalar, double>) {
    model::detail::require_finite({E, M, Y, Ms}, "feedback_G state");
  }
  const Scalar tot = M + Ms;
  if (!(tot > Scalar(0))) return Scalar(0);
  const Scalar tm = cfg.theta * M;
  const Scalar lead = tm + Ms;      // theta*M + Ms > 0 off the male-free face
  const Scalar heavy = 3 * tm + Ms;
  return cfg.phi * Y * lead * lead / (cfg.alpha * tot * heavy) +
         ((1 - p.nu) * p.nu_E * cfg.theta * E - cfg.theta * p.delta_M * M) *
             (tm + 3 * Ms) / heavy +
         p.delta_s * Ms + (tm - Ms) / cfg.alpha;
}

// Release law: clamps the raw law at zero so it is usable as a release rate.
template <class D>
typename D::Scalar feedback_u(const Eigen::MatrixBase<D>& x, const FeedbackConfig& cfg,
                              const ModelParams& p) {
  using Scalar = typename D::Scalar;
  return std::max(Scalar(0), feedback_G(x, cfg, p));
}

// Output feedback: the law evaluated with estimated (E, Y) and measured
// (M, Ms). Negative estimate transients are clamped to zero before use so
// the release rate stays meaningful; the observer itself never clamps.
double coupled_feedback_u_hat(const Vec6& x_hat, const Eigen::Vector2d& y,
                              const FeedbackConfig& cfg, const ModelParams& p);

// Linear Lyapunov functional over (E, M, Y, F, U); zero only at the origin
// of the nonnegative orthant.
template <class D>
typename D::Scalar lyapunov_V(const Eigen::MatrixBase<D>& x5, const FeedbackConfig& cfg) {
  return cfg.a_E * x5[0] + cfg.a_M * x5[1] + cfg.a_Y * x5[2] + cfg.a_F * x5[3] +
         cfg.a_U * x5[4];
}

// Backstepping Lyapunov functional: V plus the tracking penalty
// alpha*(theta*M - Ms)^2/(theta*M + Ms), defined as V on the male-free face.
template <class D>
typename D::Scalar lyapunov_W(const Eigen::MatrixBase<D>& x, const FeedbackConfig& cfg) {
  using Scalar = typename D::Scalar;
  const Scalar v = lyapunov_V(x.template head<5>(), cfg);
  const Scalar M = x[model::iM], Ms = x[model::iMs];
  if (!(M + Ms > Scalar(0))) return v;
  const Scalar mis = cfg.theta * M - Ms;
  return v + cfg.alpha * mis * mis / (cfg.theta * M + Ms);
}

// Output-feedback monitor configuration. beta_norm converts the P-weighted
// error norm to a Euclidean bound, lipschitz_C propagates estimate error
// into the release law, and lambda weights the error term inside H.
struct CoupledMonitorConfig {
  double lambda = 0;       // weight of sqrt(e'Pe) in H
  double lipschitz_C = 0;  // C' = alpha*(3*theta+1)*C_y
  double beta_norm = 0;    // 1/sqrt(lambda_min(P))
  double xi = 0;
  double c_s = 0;          // min(c1, c2, xi/4)
  double c_w = 0;          // min(c_prime, xi/2)
  double c_e = 0;          // min(c1, c2, c_prime, xi/4)
};

// Auto-derivation of the monitor constants from a certificate matrix P and
// its margin xi. All fields configurable afterwards.
CoupledMonitorConfig make_coupled_monitor_config(const FeedbackConfig& cfg,
                                                 const ModelParams& p,
                                                 const Eigen::MatrixXd& P, double xi);

// Combined plant/error functional W(x) + lambda*sqrt(e'Pe), e = x_hat - x.
// Requires symmetric positive definite P.
double lyapunov_H(const Vec6& x, const Vec6& x_hat, const Eigen::MatrixXd& P,
                  const CoupledMonitorConfig& mon, const FeedbackConfig& cfg);

}  // namespace sitstab::controller
