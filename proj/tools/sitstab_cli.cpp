#include <CLI11.hpp>

#include "sitstab/certkit.hpp"
#include "sitstab/controller.hpp"
#include "sitstab/model.hpp"
#include "sitstab/observer.hpp"
#include "sitstab/sim.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace sitstab;

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;  // infeasible, diverged, synthesis failure
constexpr int kExitUsage = 2;   // bad flags, bad files, bad schemas

model::LoadedParams load_params_or_die(const std::string& path) {
  if (path.empty()) {
    throw std::invalid_argument(
        "no parameter file: pass --params or set SIT_STAB_PARAMS");
  }
  model::LoadedParams loaded = model::load_params(path);
  for (const auto& w : loaded.warnings) {
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  return loaded;
}

std::optional<double> parse_capacity(const std::string& text) {
  if (text == "inf") return std::nullopt;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(v > 0)) {
    throw std::invalid_argument("--K must be a positive number or \"inf\"");
  }
  return v;
}

model::Vec6 vec6_of(const std::vector<double>& entries, const char* flag) {
  if (entries.size() != 6) {
    throw std::invalid_argument(std::string(flag) +
                                " needs 6 comma-separated values (E,M,Y,F,U,Ms)");
  }
  model::Vec6 x;
  for (int i = 0; i < 6; ++i) {
    if (!std::isfinite(entries[i]) || entries[i] < 0) {
      throw std::invalid_argument(std::string(flag) +
                                  " components must be finite and nonnegative");
    }
    x[i] = entries[i];
  }
  return x;
}

struct SimulateArgs {
  std::string kind;
  std::string params_path;
  std::string out_path;
  std::string gain_path;
  std::string cert_path;
  std::string capacity;  // empty = keep the file's value
  std::string method = "rk4";
  double theta = 290;
  double alpha = 90;
  double dt = 0.01;
  double t_end = -1;  // -1 = kind default
  double u_const = 500000;
  double eta2_plant = -1;
  int stride = 100;
  std::vector<double> x0, xh0;
};

void print_summary(const sim::Trajectory& traj, const char* rate_of,
                   const std::vector<double>* rate_series) {
  const Eigen::VectorXd& xf = traj.states.back();
  std::printf("final state max = %.6g\n", xf.cwiseAbs().maxCoeff());
  if (!traj.estimates.empty()) {
    std::printf("final estimate max = %.6g\n",
                traj.estimates.back().cwiseAbs().maxCoeff());
  }
  if (const auto tc = sim::convergence_time(traj)) {
    std::printf("time to 1e-3 of initial scale = %.6g\n", *tc);
  } else {
    std::printf("time to 1e-3 of initial scale = not reached\n");
  }
  if (rate_series) {
    if (const auto rate = sim::fitted_decay_rate(traj.times, *rate_series)) {
      std::printf("fitted decay rate of %s = %.6g per day\n", rate_of, *rate);
    } else {
      std::printf("fitted decay rate of %s = unavailable\n", rate_of);
    }
  }
}

void print_envelope(const char* name, const sim::Trajectory& traj,
                    const std::vector<double>* series, double rate, double slack) {
  if (!series) {
    std::printf("envelope check: n/a\n");
    return;
  }
  const auto res = sim::check_envelope(traj.times, *series, rate, slack);
  std::printf("envelope %s at rate %.6g: %s (worst ratio %.4g)\n", name, rate,
              res.pass ? "PASS" : "FAIL", res.worst_ratio);
}

int cmd_simulate(const SimulateArgs& args) {
  model::LoadedParams loaded = load_params_or_die(args.params_path);
  model::ModelParams p = loaded.params;

  // Linear-model scenarios default to unbounded capacity; an explicit --K
  // (like every other override) wins over the file, with a note.
  const bool linear_kind = args.kind == "observer" || args.kind == "coupled";
  if (!args.capacity.empty()) {
    const auto K = parse_capacity(args.capacity);
    if (p.K != K) {
      std::fprintf(stderr, "note: --K overrides the capacity from %s\n",
                   args.params_path.c_str());
    }
    p.K = K;
  } else if (linear_kind && p.finite_capacity()) {
    std::fprintf(stderr,
                 "note: %s scenario runs with unbounded capacity; pass --K to keep "
                 "the file's value\n",
                 args.kind.c_str());
    p.K.reset();
  }

  sim::SimOptions opts;
  opts.dt = args.dt;
  opts.record_stride = args.stride;
  opts.method =
      args.method == "rk45" ? sim::Method::rk45_adaptive : sim::Method::rk4_fixed;

  std::optional<certkit::Certificate> cert;
  if (!args.cert_path.empty()) cert = certkit::load_certificate(args.cert_path);

  sim::Trajectory traj;
  const char* rate_of = "W";
  const std::vector<double>* rate_series = nullptr;
  const char* env_name = nullptr;
  const std::vector<double>* env_series = nullptr;
  double env_rate = 0;

  if (args.kind == "closed-loop" || args.kind == "robustness") {
    opts.t_end = args.t_end > 0 ? args.t_end
                                : (args.kind == "robustness" ? 2000.0 : 1000.0);
    const auto cfg = controller::make_feedback_config(p, args.theta, args.alpha);
    model::Vec6 x0 = args.x0.empty()
                         ? model::Vec6(20700, 5300, 1500, 13000, 0, 0)
                         : vec6_of(args.x0, "--x0");
    if (args.kind == "robustness") {
      if (!(args.eta2_plant >= 0)) {
        throw std::invalid_argument("robustness scenario needs --eta2-plant");
      }
      traj = sim::run_robustness(p, cfg, args.eta2_plant, x0, opts);
      // The perturbed plant voids the nominal decay certificate; no envelope.
    } else {
      traj = sim::run_closed_loop(p, cfg, x0, opts);
      env_name = "W";
      env_series = traj.monitor("W");
      env_rate = cfg.c_p;
    }
    rate_series = traj.monitor("W");
  } else if (args.kind == "proportional") {
    opts.t_end = args.t_end > 0 ? args.t_end : 1000.0;
    model::Vec5 x0;
    if (!args.x0.empty()) {
      if (args.x0.size() != 5 && args.x0.size() != 6) {
        throw std::invalid_argument("--x0 needs 5 values (E,M,Y,F,U) here");
      }
      for (std::size_t i = 0; i < 5; ++i) {
        if (!std::isfinite(args.x0[i]) || args.x0[i] < 0) {
          throw std::invalid_argument("--x0 components must be finite and nonnegative");
        }
        x0[i] = args.x0[i];
      }
    } else {
      if (!p.finite_capacity()) {
        throw std::invalid_argument(
            "proportional scenario needs finite K or an explicit --x0");
      }
      const model::Vec4 eq = model::persistence_equilibrium(p, *p.K);
      x0 << eq[0], eq[1], eq[2], eq[3], 0;
    }
    traj = sim::run_proportional(p, args.theta, x0, opts);
    rate_of = "V";
    rate_series = traj.monitor("V");
    env_name = "V";
    env_series = rate_series;
    env_rate = controller::make_feedback_config(p, args.theta, 1.0).c;
  } else if (args.kind == "observer") {
    opts.t_end = args.t_end > 0 ? args.t_end : 300.0;
    if (args.gain_path.empty()) {
      throw std::invalid_argument("observer scenario needs --gain");
    }
    const observer::Mat62 L = observer::load_gain(args.gain_path);
    const model::Vec6 x0 = args.x0.empty() ? model::Vec6(400, 100, 150, 120, 120, 50)
                                           : vec6_of(args.x0, "--x0");
    const model::Vec6 xh0 = args.xh0.empty() ? model::Vec6(120, 70, 70, 50, 60, 0)
                                             : vec6_of(args.xh0, "--xh0");
    if (!(args.u_const >= 0)) {
      throw std::invalid_argument("--u-const must be nonnegative");
    }
    const double u = args.u_const;
    traj = sim::run_observer(
        p, L, [u](double) { return u; }, x0, xh0, opts,
        cert ? &cert->P : nullptr);
    rate_of = "ePe";
    rate_series = traj.monitor("ePe");
    if (cert) {
      env_name = "ePe";
      env_series = rate_series;
      env_rate = cert->xi / certkit::sym_eigen(cert->P).first.maxCoeff();
    }
  } else {  // coupled
    opts.t_end = args.t_end > 0 ? args.t_end : 1000.0;
    if (args.gain_path.empty()) {
      throw std::invalid_argument("coupled scenario needs --gain");
    }
    const observer::Mat62 L = observer::load_gain(args.gain_path);
    const auto cfg = controller::make_feedback_config(p, args.theta, args.alpha);
    const model::Vec6 x0 = args.x0.empty() ? model::Vec6(20000, 5000, 1500, 12000, 500, 0)
                                           : vec6_of(args.x0, "--x0");
    const model::Vec6 xh0 = args.xh0.empty() ? model::Vec6(2000, 500, 150, 1200, 0, 0)
                                             : vec6_of(args.xh0, "--xh0");
    std::optional<sim::CoupledMonitor> monitor;
    if (cert) {
      monitor = sim::CoupledMonitor{
          cert->P, controller::make_coupled_monitor_config(cfg, p, cert->P, cert->xi)};
    }
    traj = sim::run_coupled(p, cfg, L, x0, xh0, opts, monitor ? &*monitor : nullptr);
    rate_series = traj.monitor("W");
    if (monitor) {
      env_name = "H";
      env_series = traj.monitor("H");
      env_rate = monitor->config.c_e;
    }
  }

  if (args.out_path.empty()) throw std::invalid_argument("simulate needs --out");
  sim::write_csv(traj, args.out_path);
  std::printf("wrote %s (%zu samples)\n", args.out_path.c_str(), traj.times.size());
  print_summary(traj, rate_of, rate_series);
  print_envelope(env_name ? env_name : "", traj, env_series, env_rate,
                 opts.envelope_slack);
  if (traj.aborted) {
    std::fprintf(stderr, "simulation aborted: %s\n", traj.abort_reason.c_str());
    return kExitDomain;
  }
  return kExitOk;
}

int cmd_threshold(const std::string& params_path) {
  const model::LoadedParams loaded = load_params_or_die(params_path);
  const double r0 = model::basic_offspring_number(loaded.params);
  std::printf("R0 = %.4g\n", r0);
  if (r0 <= 1) {
    std::printf("no release needed\n");
  } else {
    std::printf("theta* = %.2f\n", model::theta_threshold(loaded.params));
  }
  return kExitOk;
}

certkit::LpvSystem design_system(const std::string& params_path) {
  model::LoadedParams loaded = load_params_or_die(params_path);
  if (loaded.params.finite_capacity()) {
    std::fprintf(stderr,
                 "note: observer design uses the unbounded-capacity model; "
                 "ignoring K from %s\n",
                 params_path.c_str());
    loaded.params.K.reset();
  }
  return observer::build_sit_lpv(loaded.params);
}

bool file_pins_xi(const std::string& cert_path) {
  std::ifstream in(cert_path);
  nlohmann::json doc;
  in >> doc;
  return doc.is_object() && doc.contains("xi");
}

int cmd_certify(const std::string& cert_path, const std::string& params_path,
                const std::optional<double>& xi_flag) {
  certkit::Certificate cert = certkit::load_certificate(cert_path);
  if (xi_flag) {
    if (!file_pins_xi(cert_path)) {
      cert.xi = *xi_flag;
    } else if (cert.xi != *xi_flag) {
      std::fprintf(stderr,
                   "warning: certificate file pins xi = %g; ignoring --xi %g\n",
                   cert.xi, *xi_flag);
    }
  }
  const certkit::LpvSystem sys = design_system(params_path);
  const certkit::Verdict verdict = certkit::verify_certificate(sys, cert);

  std::printf("P definite: %s (min eigenvalue %.6g)\n",
              verdict.min_P_eig > 0 ? "yes" : "no", verdict.min_P_eig);
  for (std::size_t i = 0; i < verdict.per_vertex.size(); ++i) {
    std::printf("vertex %zu: lambda_max = %.6f\n", i, verdict.per_vertex[i]);
  }
  if (verdict.min_P_eig > 0) {
    const Eigen::MatrixXd L = certkit::gain_from_certificate(cert);
    std::printf("gain L:\n");
    for (int i = 0; i < L.rows(); ++i) {
      std::printf(" ");
      for (int j = 0; j < L.cols(); ++j) std::printf(" %12.4f", L(i, j));
      std::printf("\n");
    }
  }
  if (verdict.feasible) {
    std::printf("verdict: feasible (margin %.6g)\n", verdict.margin());
    return kExitOk;
  }
  std::printf("verdict: infeasible (worst residual eigenvalue %.6f)\n",
              verdict.worst_eig);
  return kExitDomain;
}

int cmd_synthesize(const std::string& params_path, const std::string& out_path,
                   double xi, const certkit::SynthesisOptions& options) {
  const certkit::LpvSystem sys = design_system(params_path);
  const certkit::Certificate cert = certkit::synthesize_certificate(sys, xi, options);
  const certkit::Verdict verdict = certkit::verify_certificate(sys, cert);
  certkit::save_certificate(cert, out_path);
  std::printf("wrote %s\n", out_path.c_str());
  std::printf("margin = %.6g\n", verdict.margin());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sterile-release stabilization toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a scenario and write its CSV");
  sim_cmd->add_option("--kind", sim_args.kind, "Scenario")
      ->required()
      ->check(CLI::IsMember(
          {"closed-loop", "proportional", "robustness", "observer", "coupled"}));
  sim_cmd->add_option("--params", sim_args.params_path, "Parameter JSON file")
      ->envname("SIT_STAB_PARAMS");
  sim_cmd->add_option("--out", sim_args.out_path, "Output CSV path");
  sim_cmd->add_option("--theta", sim_args.theta, "Release ratio");
  sim_cmd->add_option("--alpha", sim_args.alpha, "Backstepping weight");
  sim_cmd->add_option("--eta2-plant", sim_args.eta2_plant,
                      "Plant-side sterile mating transfer rate (robustness)");
  sim_cmd->add_option("--K", sim_args.capacity, "Capacity override: number or \"inf\"");
  sim_cmd->add_option("--dt", sim_args.dt, "Step size [days]");
  sim_cmd->add_option("--t-end", sim_args.t_end, "Horizon [days]");
  sim_cmd->add_option("--x0", sim_args.x0, "Initial plant state E,M,Y,F,U,Ms")
      ->delimiter(',');
  sim_cmd->add_option("--xh0", sim_args.xh0, "Initial estimate E,M,Y,F,U,Ms")
      ->delimiter(',');
  sim_cmd->add_option("--u-const", sim_args.u_const,
                      "Constant release rate (observer scenario)");
  sim_cmd->add_option("--gain", sim_args.gain_path, "Observer gain JSON file");
  sim_cmd->add_option("--cert", sim_args.cert_path,
                      "Certificate JSON enabling the error-energy monitors");
  sim_cmd->add_option("--method", sim_args.method, "Integrator")
      ->check(CLI::IsMember({"rk4", "rk45"}));
  sim_cmd->add_option("--stride", sim_args.stride, "Record every n-th step")
      ->check(CLI::PositiveNumber);

  std::string threshold_params;
  auto* thr_cmd =
      app.add_subcommand("threshold", "Print the offspring number and release ratio");
  thr_cmd->add_option("--params", threshold_params, "Parameter JSON file")
      ->envname("SIT_STAB_PARAMS");

  std::string certify_cert, certify_params;
  std::optional<double> certify_xi;
  auto* cert_cmd =
      app.add_subcommand("certify", "Check an observer certificate at the vertices");
  cert_cmd->add_option("--cert", certify_cert, "Certificate JSON file")->required();
  cert_cmd->add_option("--params", certify_params, "Parameter JSON file")
      ->envname("SIT_STAB_PARAMS");
  cert_cmd->add_option("--xi", certify_xi,
                       "Margin when the certificate file does not pin one");

  std::string synth_params, synth_out;
  double synth_xi = 1.0;
  certkit::SynthesisOptions synth_opts;
  synth_opts.rate_shift = 0.025;
  synth_opts.gain_cap = 4.0;
  auto* synth_cmd =
      app.add_subcommand("synthesize", "Search for a feasible observer certificate");
  synth_cmd->add_option("--params", synth_params, "Parameter JSON file")
      ->envname("SIT_STAB_PARAMS");
  synth_cmd->add_option("--out", synth_out, "Certificate JSON output path")->required();
  synth_cmd->add_option("--xi", synth_xi, "Required margin")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_opts.seed, "Search seed");
  synth_cmd->add_option("--restarts", synth_opts.restarts, "Search restarts")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--iters", synth_opts.iters, "Iterations per restart")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--rate-shift", synth_opts.rate_shift,
                        "Decay-rate target shifted into the objective");
  synth_cmd->add_option("--gain-cap", synth_opts.gain_cap,
                        "Cap on the Frobenius norm of R (0 = off)");

  try {
    app.parse(argc, argv);
    if (*sim_cmd) return cmd_simulate(sim_args);
    if (*thr_cmd) return cmd_threshold(threshold_params);
    if (*cert_cmd) return cmd_certify(certify_cert, certify_params, certify_xi);
    return cmd_synthesize(synth_params, synth_out, synth_xi, synth_opts);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDomain;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
}
