#include "sitstab/sim.hpp"

#include "sitstab/certkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sitstab::sim {

namespace {

void check_options(const SimOptions& opts, Eigen::Index dim) {
  if (!(opts.dt > 0) || !std::isfinite(opts.dt)) {
    throw std::invalid_argument("dt must be positive and finite");
  }
  if (!(opts.t_end > 0) || !std::isfinite(opts.t_end)) {
    throw std::invalid_argument("t_end must be positive and finite");
  }
  if (opts.record_stride < 1) throw std::invalid_argument("record_stride must be >= 1");
  if (opts.method == Method::rk45_adaptive &&
      (!(opts.rel_tol > 0) || !(opts.abs_tol > 0))) {
    throw std::invalid_argument("adaptive tolerances must be positive");
  }
  if (opts.projection_dim > dim) {
    throw std::invalid_argument("projection_dim exceeds the state dimension");
  }
}

struct Stepper {
  const Field& field;
  Eigen::Index pd;  // leading components clamped to >= 0 after accepted steps
  bool projection;

  void project(Eigen::VectorXd& x) const {
    if (!projection) return;
    for (Eigen::Index i = 0; i < pd; ++i) x[i] = std::max(0.0, x[i]);
  }

  Eigen::VectorXd rk4(double t, const Eigen::VectorXd& x, double h) const {
    const Eigen::VectorXd k1 = field(t, x);
    const Eigen::VectorXd k2 = field(t + h / 2, x + (h / 2) * k1);
    const Eigen::VectorXd k3 = field(t + h / 2, x + (h / 2) * k2);
    const Eigen::VectorXd k4 = field(t + h, x + h * k3);
    return x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
  }
};

void abort_run(Trajectory& traj, const std::string& reason) {
  traj.aborted = true;
  traj.abort_reason = reason;
}

std::string at_time(const char* what, double t) {
  std::ostringstream msg;
  msg << what << " at t = " << t;
  return msg.str();
}

}  // namespace

const std::vector<double>* Trajectory::monitor(const std::string& name) const {
  for (const auto& [n, series] : monitors) {
    if (n == name) return &series;
  }
  return nullptr;
}

Trajectory integrate(const Field& field, const Eigen::VectorXd& x0,
                     const SimOptions& opts) {
  check_options(opts, x0.size());
  if (!x0.allFinite()) throw std::invalid_argument("initial state must be finite");

  Trajectory traj;
  const Eigen::Index pd = opts.projection_dim < 0
                              ? x0.size()
                              : static_cast<Eigen::Index>(opts.projection_dim);
  const Stepper stepper{field, pd, opts.projection};
  Eigen::VectorXd x = x0;
  traj.times.push_back(0.0);
  traj.states.push_back(x);

  auto record = [&](double t) {
    traj.times.push_back(t);
    traj.states.push_back(x);
  };

  if (opts.method == Method::rk4_fixed) {
    // Steps live on the exact grid k*dt (the last one shortened to land on
    // t_end) so reruns with the same options reproduce bit for bit.
    const long long n_steps =
        std::max<long long>(1, std::llround(std::ceil(opts.t_end / opts.dt - 1e-9)));
    for (long long k = 0; k < n_steps; ++k) {
      const double t = k * opts.dt;
      const bool last = (k + 1 == n_steps);
      const double h = last ? opts.t_end - t : opts.dt;
      Eigen::VectorXd x_new;
      try {
        x_new = stepper.rk4(t, x, h);
      } catch (const std::exception& e) {
        abort_run(traj, at_time(e.what(), t));
        return traj;
      }
      if (!x_new.allFinite()) {
        abort_run(traj, at_time("non-finite state", t + h));
        return traj;
      }
      x = std::move(x_new);
      stepper.project(x);
      if (last || (k + 1) % opts.record_stride == 0) {
        record(last ? opts.t_end : (k + 1) * opts.dt);
      }
    }
    return traj;
  }

  // Dormand-Prince 5(4) embedded pair; the fifth-order solution advances.
  static const double a[7][6] = {
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  static const double c[7] = {0.0,     1.0 / 5, 3.0 / 10, 4.0 / 5,
                              8.0 / 9, 1.0,     1.0};
  static const double b4[7] = {5179.0 / 57600,    0.0,          7571.0 / 16695,
                               393.0 / 640,       -92097.0 / 339200,
                               187.0 / 2100,      1.0 / 40};

  double t = 0.0;
  double h = std::min(opts.dt, opts.t_end);
  long long accepted = 0;
  int rejected_in_a_row = 0;
  while (t < opts.t_end * (1 - 1e-14)) {
    h = std::min(h, opts.t_end - t);
    if (h < 1e-13 * std::max(1.0, t)) {
      abort_run(traj, at_time("step size underflow", t));
      return traj;
    }
    std::array<Eigen::VectorXd, 7> k;
    Eigen::VectorXd x5;
    try {
      for (int s = 0; s < 7; ++s) {
        Eigen::VectorXd xs = x;
        for (int j = 0; j < s; ++j) {
          if (a[s][j] != 0) xs += (h * a[s][j]) * k[j];
        }
        k[s] = field(t + c[s] * h, xs);
      }
      x5 = x;
      for (int j = 0; j < 6; ++j) {
        if (a[6][j] != 0) x5 += (h * a[6][j]) * k[j];
      }
    } catch (const std::exception& e) {
      abort_run(traj, at_time(e.what(), t));
      return traj;
    }

    double err = 0.0;
    if (!x5.allFinite()) {
      err = std::numeric_limits<double>::infinity();
    } else {
      Eigen::VectorXd x4 = x;
      for (int j = 0; j < 7; ++j) x4 += (h * b4[j]) * k[j];
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double scale =
            opts.abs_tol + opts.rel_tol * std::max(std::abs(x[i]), std::abs(x5[i]));
        err = std::max(err, std::abs(x5[i] - x4[i]) / scale);
      }
    }

    if (err <= 1.0) {
      rejected_in_a_row = 0;
      t += h;
      x = std::move(x5);
      stepper.project(x);
      ++accepted;
      const bool last = !(t < opts.t_end * (1 - 1e-14));
      if (last || accepted % opts.record_stride == 0) record(last ? opts.t_end : t);
    } else if (++rejected_in_a_row > 200) {
      abort_run(traj, at_time("no acceptable step size", t));
      return traj;
    }
    const double factor =
        err > 0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
    h *= factor;
  }
  return traj;
}

EnvelopeResult check_envelope(const std::vector<double>& times,
                              const std::vector<double>& values, double rate,
                              double slack, double skip_time) {
  if (times.size() != values.size() || times.empty()) {
    throw std::invalid_argument("envelope check needs matching non-empty series");
  }
  if (!(slack > 0)) throw std::invalid_argument("envelope slack must be positive");
  EnvelopeResult res;
  const double t0 = times.front();
  const double base = values.front();
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] - t0 < skip_time) continue;
    const double env = slack * base * std::exp(-rate * (times[i] - t0));
    double ratio;
    if (env > 0) {
      ratio = values[i] / env;
    } else {
      ratio = values[i] <= 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    res.worst_ratio = std::max(res.worst_ratio, ratio);
  }
  res.pass = res.worst_ratio <= 1.0;
  return res;
}

Trajectory run_closed_loop(const ModelParams& p, const FeedbackConfig& cfg,
                           const Vec6& x0, const SimOptions& opts) {
  model::validate(p);
  const Field field = [&](double, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const Vec6 xx = x;
    return model::rhs_controlled(xx, controller::feedback_u(xx, cfg, p), p);
  };
  Trajectory traj = integrate(field, x0, opts);
  std::vector<double> v, w;
  for (const auto& s : traj.states) {
    const Vec6 xx = s;
    traj.controls.push_back(controller::feedback_u(xx, cfg, p));
    v.push_back(controller::lyapunov_V(xx.head<5>(), cfg));
    w.push_back(controller::lyapunov_W(xx, cfg));
  }
  traj.monitors.emplace_back("V", std::move(v));
  traj.monitors.emplace_back("W", std::move(w));
  return traj;
}

Trajectory run_proportional(const ModelParams& p, double theta, const Vec5& x0_5,
                            const SimOptions& opts) {
  model::validate(p);
  const FeedbackConfig cfg = controller::make_feedback_config(p, theta, 1.0);
  const double fm = 1 / (1 + theta);
  const double fs = theta / (1 + theta);
  const Field field = [&, fm, fs](double, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const double E = x[0], M = x[1], Y = x[2], F = x[3], U = x[4];
    Eigen::VectorXd dx(5);
    dx[0] = (p.finite_capacity() ? p.beta_E * F * (1 - E / *p.K) : p.beta_E * F) -
            (p.delta_E + p.nu_E) * E;
    dx[1] = (1 - p.nu) * p.nu_E * E - p.delta_M * M;
    dx[2] = p.nu * p.nu_E * E - p.delta_eta() * fm * Y - (p.eta2 + p.delta_Y) * Y;
    dx[3] = p.eta1 * fm * Y - p.delta_F * F;
    dx[4] = p.eta2 * fs * Y - p.delta_U * U;
    return dx;
  };
  Trajectory traj = integrate(field, x0_5, opts);
  std::vector<double> v;
  for (auto& s : traj.states) {
    v.push_back(controller::lyapunov_V(s.head<5>(), cfg));
    Vec6 full;
    full << s[0], s[1], s[2], s[3], s[4], theta * s[1];
    s = full;
  }
  traj.monitors.emplace_back("V", std::move(v));
  return traj;
}

Trajectory run_robustness(const ModelParams& p, const FeedbackConfig& cfg,
                          double eta2_plant, const Vec6& x0, const SimOptions& opts) {
  ModelParams plant = p;
  plant.eta2 = eta2_plant;
  model::validate(plant);
  // The law and both functionals keep the nominal constants; only the plant
  // runs at the perturbed mating transfer rate.
  const Field field = [&](double, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const Vec6 xx = x;
    return model::rhs_controlled(xx, controller::feedback_u(xx, cfg, p), plant);
  };
  Trajectory traj = integrate(field, x0, opts);
  std::vector<double> v, w;
  for (const auto& s : traj.states) {
    const Vec6 xx = s;
    traj.controls.push_back(controller::feedback_u(xx, cfg, p));
    v.push_back(controller::lyapunov_V(xx.head<5>(), cfg));
    w.push_back(controller::lyapunov_W(xx, cfg));
  }
  traj.monitors.emplace_back("V", std::move(v));
  traj.monitors.emplace_back("W", std::move(w));
  return traj;
}

namespace {

// Measured male counts, clamped against the tiny negative excursions an
// unprojected intermediate stage can produce near extinction.
observer::SitOutput measure(const Eigen::VectorXd& plant) {
  return {std::max(0.0, plant[model::iM]), std::max(0.0, plant[model::iMs])};
}

Trajectory split_stacked(Trajectory&& raw) {
  Trajectory traj = std::move(raw);
  traj.estimates.reserve(traj.states.size());
  for (auto& s : traj.states) {
    traj.estimates.push_back(s.tail(6));
    s = Eigen::VectorXd(s.head(6));
  }
  return traj;
}

}  // namespace

Trajectory run_observer(const ModelParams& p, const observer::Mat62& L,
                        const std::function<double(double)>& u_signal, const Vec6& x0,
                        const Vec6& xh0, const SimOptions& opts,
                        const Eigen::MatrixXd* P_monitor) {
  model::validate(p);
  ModelParams design = p;
  design.K.reset();
  const certkit::LpvSystem sys = observer::build_sit_lpv(design);
  if (P_monitor && (P_monitor->rows() != 6 || P_monitor->cols() != 6)) {
    throw std::invalid_argument("error-energy monitor needs a 6x6 matrix");
  }

  const Field field = [&](double t, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const Vec6 plant = x.head(6);
    const Vec6 xhat = x.tail(6);
    const double u = u_signal(t);
    Eigen::VectorXd dx(12);
    dx.head(6) = model::rhs_controlled(plant, u, p);
    dx.tail(6) = observer::observer_rhs(xhat, measure(plant), u, L, sys);
    return dx;
  };

  Eigen::VectorXd stacked(12);
  stacked << x0, xh0;
  SimOptions o = opts;
  o.projection_dim = 6;  // estimates run unclamped
  Trajectory traj = split_stacked(integrate(field, stacked, o));
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    traj.controls.push_back(u_signal(traj.times[i]));
  }
  if (P_monitor) {
    std::vector<double> epe;
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
      const Eigen::VectorXd e = traj.estimates[i] - traj.states[i];
      epe.push_back(e.dot(*P_monitor * e));
    }
    traj.monitors.emplace_back("ePe", std::move(epe));
  }
  return traj;
}

Trajectory run_coupled(const ModelParams& p, const FeedbackConfig& cfg,
                       const observer::Mat62& L, const Vec6& x0, const Vec6& xh0,
                       const SimOptions& opts, const CoupledMonitor* monitor) {
  model::validate(p);
  ModelParams design = p;
  design.K.reset();
  const certkit::LpvSystem sys = observer::build_sit_lpv(design);
  if (monitor) {
    const auto evals = certkit::sym_eigen(monitor->P).first;
    if (!(evals.minCoeff() > 0)) {
      throw std::invalid_argument("coupled monitor needs a positive definite P");
    }
  }

  auto control = [&](const Vec6& xhat, const observer::SitOutput& y) {
    return controller::coupled_feedback_u_hat(xhat, Eigen::Vector2d(y.y1, y.y2), cfg, p);
  };
  const Field field = [&](double, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const Vec6 plant = x.head(6);
    const Vec6 xhat = x.tail(6);
    const observer::SitOutput y = measure(plant);
    const double u = control(xhat, y);
    Eigen::VectorXd dx(12);
    dx.head(6) = model::rhs_controlled(plant, u, p);
    dx.tail(6) = observer::observer_rhs(xhat, y, u, L, sys);
    return dx;
  };

  Eigen::VectorXd stacked(12);
  stacked << x0, xh0;
  SimOptions o = opts;
  o.projection_dim = 6;
  Trajectory traj = split_stacked(integrate(field, stacked, o));
  std::vector<double> w, h, epe;
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    const Vec6 plant = traj.states[i];
    const Vec6 xhat = traj.estimates[i];
    traj.controls.push_back(control(xhat, measure(plant)));
    w.push_back(controller::lyapunov_W(plant, cfg));
    if (monitor) {
      const Eigen::VectorXd e = xhat - plant;
      const double energy = std::max(0.0, e.dot(monitor->P * e));
      h.push_back(w.back() + monitor->config.lambda * std::sqrt(energy));
      epe.push_back(energy);
    }
  }
  traj.monitors.emplace_back("W", std::move(w));
  if (monitor) {
    traj.monitors.emplace_back("H", std::move(h));
    traj.monitors.emplace_back("ePe", std::move(epe));
  }
  return traj;
}

namespace {

void append_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9e", v);
  out += buf;
}

}  // namespace

std::string csv_string(const Trajectory& traj) {
  const std::size_t n = traj.times.size();
  const bool with_estimates = !traj.estimates.empty();
  const bool with_controls = !traj.controls.empty();
  if (traj.states.size() != n || (with_estimates && traj.estimates.size() != n) ||
      (with_controls && traj.controls.size() != n)) {
    throw std::invalid_argument("trajectory arrays are inconsistent");
  }
  for (const auto& [name, series] : traj.monitors) {
    if (series.size() != n) {
      throw std::invalid_argument("monitor \"" + name + "\" length mismatch");
    }
  }

  std::string out = "t,E,M,Y,F,U,Ms";
  if (with_estimates) out += ",Ehat,Mhat,Yhat,Fhat,Uhat,Mshat";
  if (with_controls) out += ",u";
  for (const auto& [name, series] : traj.monitors) {
    out += ',';
    out += name;
  }
  out += '\n';

  for (std::size_t i = 0; i < n; ++i) {
    append_number(out, traj.times[i]);
    for (Eigen::Index j = 0; j < traj.states[i].size(); ++j) {
      out += ',';
      append_number(out, traj.states[i][j]);
    }
    if (with_estimates) {
      for (Eigen::Index j = 0; j < traj.estimates[i].size(); ++j) {
        out += ',';
        append_number(out, traj.estimates[i][j]);
      }
    }
    if (with_controls) {
      out += ',';
      append_number(out, traj.controls[i]);
    }
    for (const auto& [name, series] : traj.monitors) {
      out += ',';
      append_number(out, series[i]);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Trajectory& traj, const std::filesystem::path& path) {
  const std::string body = csv_string(traj);
  std::ofstream out(path, std::ios::binary);  // keep LF endings everywhere
  if (!out) throw std::runtime_error("cannot write CSV file: " + path.string());
  out << body;
}

std::optional<double> fitted_decay_rate(const std::vector<double>& times,
                                        const std::vector<double>& values) {
  if (times.size() != values.size() || times.size() < 2) return std::nullopt;
  const double t_cut = times.back() - (times.back() - times.front()) / 2;
  double n = 0, st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t_cut || !(values[i] > 0)) continue;
    const double y = std::log(values[i]);
    n += 1;
    st += times[i];
    sy += y;
    stt += times[i] * times[i];
    sty += times[i] * y;
  }
  if (n < 2) return std::nullopt;
  const double denom = n * stt - st * st;
  if (denom <= 0) return std::nullopt;
  return -(n * sty - st * sy) / denom;
}

std::optional<double> convergence_time(const Trajectory& traj, double rel) {
  if (traj.times.empty() || !(rel > 0)) return std::nullopt;
  const Eigen::VectorXd x0 = traj.states.front().cwiseAbs();
  double max_init = x0.maxCoeff();
  Eigen::VectorXd xh0;
  if (!traj.estimates.empty()) {
    xh0 = traj.estimates.front().cwiseAbs();
    max_init = std::max(max_init, xh0.maxCoeff());
  }
  if (!(max_init > 0)) return traj.times.front();
  // Components that start at zero get the scale of the largest initial one.
  auto threshold = [&](const Eigen::VectorXd& init, Eigen::Index i) {
    return rel * (init[i] > 0 ? init[i] : max_init);
  };
  auto violates = [&](std::size_t k) {
    for (Eigen::Index i = 0; i < traj.states[k].size(); ++i) {
      if (std::abs(traj.states[k][i]) > threshold(x0, i)) return true;
    }
    if (!traj.estimates.empty()) {
      for (Eigen::Index i = 0; i < traj.estimates[k].size(); ++i) {
        if (std::abs(traj.estimates[k][i]) > threshold(xh0, i)) return true;
      }
    }
    return false;
  };
  const std::size_t n = traj.times.size();
  if (violates(n - 1)) return std::nullopt;
  for (std::size_t k = n - 1; k-- > 0;) {
    if (violates(k)) return traj.times[k + 1];
  }
  return traj.times.front();
}

}  // namespace sitstab::sim
