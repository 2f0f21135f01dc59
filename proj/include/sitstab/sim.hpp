#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sitstab/controller.hpp"
#include "sitstab/model.hpp"
#include "sitstab/observer.hpp"

namespace sitstab::sim {

using model::ModelParams;
using model::Vec5;
using model::Vec6;
using controller::FeedbackConfig;

enum class Method { rk4_fixed, rk45_adaptive };

struct SimOptions {
  double dt = 0.01;           // step [days]; initial step for the adaptive method
  double t_end = 1000.0;      // horizon [days]
  Method method = Method::rk4_fixed;
  bool projection = true;     // clamp plant components to >= 0 after each step
  double envelope_slack = 1.05;
  int record_stride = 100;    // record every record_stride-th accepted step
  int projection_dim = -1;    // leading components treated as plant (-1 = all)
  double rel_tol = 1e-8;      // adaptive method only
  double abs_tol = 1e-8;
};

// Recorded curves of one run. `states` are plant states; `estimates` is
// non-empty only for observer-in-the-loop runs; `controls` only for
// controlled runs. Monitors are (name, series) pairs in emission order,
// aligned with `times`.
struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> estimates;
  std::vector<double> controls;
  std::vector<std::pair<std::string, std::vector<double>>> monitors;
  bool aborted = false;
  std::string abort_reason;

  const std::vector<double>* monitor(const std::string& name) const;
};

// Time-dependent state derivative.
using Field = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

// Fixed-step classic fourth-order or embedded adaptive integration. After
// each accepted step the leading projection_dim components are clamped to
// >= 0 when projection is on. A non-finite state aborts the run, keeping
// everything recorded up to the last valid time.
Trajectory integrate(const Field& field, const Eigen::VectorXd& x0, const SimOptions& opts);

struct EnvelopeResult {
  bool pass = false;
  double worst_ratio = 0;  // max over checked samples of value/envelope
};

// Checks values[i] <= slack * values[0] * exp(-rate*(t_i - t_0)) for every
// sample with t_i - t_0 >= skip_time (discrete clamping can produce a
// one-step overshoot right at the start).
EnvelopeResult check_envelope(const std::vector<double>& times,
                              const std::vector<double>& values, double rate,
                              double slack, double skip_time = 0);

// Full-information closed loop u = feedback_u. Records u, V, W.
Trajectory run_closed_loop(const ModelParams& p, const FeedbackConfig& cfg,
                           const Vec6& x0, const SimOptions& opts);

// Five-state flow under the exact proportional pressure Ms == theta*M (the
// mating fractions become the constants 1/(1+theta), theta/(1+theta)).
// Records V; recorded states carry Ms = theta*M in the last slot.
Trajectory run_proportional(const ModelParams& p, double theta, const Vec5& x0_5,
                            const SimOptions& opts);

// Closed loop with the controller designed at p.eta2 while the plant runs at
// eta2_plant (both mating-transfer channels shift accordingly). Records u, V, W
// (V and W evaluated with the controller's constants).
Trajectory run_robustness(const ModelParams& p, const FeedbackConfig& cfg,
                          double eta2_plant, const Vec6& x0, const SimOptions& opts);

// Plant plus observer under an exogenous release signal, sharing y(t) from
// the plant. Records u and, when P_monitor is given, the error energy e'Pe
// (monitor "ePe").
Trajectory run_observer(const ModelParams& p, const observer::Mat62& L,
                        const std::function<double(double)>& u_signal, const Vec6& x0,
                        const Vec6& xh0, const SimOptions& opts,
                        const Eigen::MatrixXd* P_monitor = nullptr);

struct CoupledMonitor {
  Eigen::MatrixXd P;
  controller::CoupledMonitorConfig config;
};

// Output-feedback loop: plant and observer both driven by u_hat(x_hat, y).
// Records u, W and, when a monitor is given, H and e'Pe.
Trajectory run_coupled(const ModelParams& p, const FeedbackConfig& cfg,
                       const observer::Mat62& L, const Vec6& x0, const Vec6& xh0,
                       const SimOptions& opts, const CoupledMonitor* monitor = nullptr);

// CSV emission: header t,E,M,Y,F,U,Ms[,Ehat,...,Mshat][,u][,V,W,H,ePe]
// with the scenario's recorded subset, one row per recorded sample, decimal
// with 10 significant digits, LF line endings.
void write_csv(const Trajectory& traj, const std::filesystem::path& path);
std::string csv_string(const Trajectory& traj);

// Least-squares slope of -log(values) over the final half of the horizon;
// samples with values <= 0 are skipped. Returns nullopt when fewer than two
// usable samples exist.
std::optional<double> fitted_decay_rate(const std::vector<double>& times,
                                        const std::vector<double>& values);

// Earliest recorded time from which every plant state (and estimate
// magnitude, when present) stays below rel * its own initial value
// (rel * the largest initial component, for components starting at zero).
// Returns nullopt when the tail never settles below the thresholds.
std::optional<double> convergence_time(const Trajectory& traj, double rel = 1e-3);

}  // namespace sitstab::sim
