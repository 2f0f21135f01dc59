#include "sitstab/model.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace sitstab::model {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string("model parameter ") + name +
                                " must be strictly positive");
  }
}

}  // namespace

void validate(const ModelParams& p) {
  require_positive(p.beta_E, "beta_E");
  require_positive(p.nu_E, "nu_E");
  require_positive(p.delta_E, "delta_E");
  require_positive(p.delta_M, "delta_M");
  require_positive(p.delta_Y, "delta_Y");
  require_positive(p.delta_F, "delta_F");
  require_positive(p.delta_U, "delta_U");
  require_positive(p.delta_s, "delta_s");
  if (!(p.nu > 0 && p.nu < 1)) {
    throw std::invalid_argument("model parameter nu must lie in (0,1)");
  }
  if (!(p.eta1 >= p.eta2 && p.eta2 >= 0) || !std::isfinite(p.eta1) ||
      !std::isfinite(p.eta2)) {
    throw std::invalid_argument("mating rates must satisfy eta1 >= eta2 >= 0");
  }
  if (!(p.eta1 > 0)) {
    throw std::invalid_argument("model parameter eta1 must be strictly positive");
  }
  if (p.delta_s < p.delta_M) {
    throw std::invalid_argument(
        "sterile males cannot outlive fertile ones: delta_s >= delta_M required");
  }
  if (p.K && (!(*p.K > 0) || !std::isfinite(*p.K))) {
    throw std::invalid_argument("capacity K must be strictly positive when finite");
  }
}

double basic_offspring_number(const ModelParams& p) {
  validate(p);
  return p.eta1 * p.beta_E * p.nu * p.nu_E /
         (p.delta_F * (p.nu_E + p.delta_E) * (p.eta1 + p.delta_Y));
}

double offspring_number_theta(const ModelParams& p, double theta) {
  validate(p);
  if (!(theta > 0)) throw std::invalid_argument("theta must be positive");
  return p.beta_E * p.eta1 * p.nu * p.nu_E /
         (p.delta_F * (p.nu_E + p.delta_E) *
          (p.delta_eta() + (1 + theta) * (p.eta2 + p.delta_Y)));
}

double theta_threshold(const ModelParams& p) {
  validate(p);
  const double k = p.beta_E * p.eta1 * p.nu * p.nu_E / (p.delta_F * (p.nu_E + p.delta_E));
  return (k - p.delta_eta()) / (p.eta2 + p.delta_Y) - 1;
}

Vec4 persistence_equilibrium(const ModelParams& p, double K) {
  validate(p);
  if (!(K > 0) || !std::isfinite(K)) {
    throw std::invalid_argument("persistence equilibrium needs finite positive K");
  }
  const double r0 = basic_offspring_number(p);
  if (r0 <= 1) {
    throw std::domain_error(
        "extinction is the only equilibrium (basic offspring number <= 1)");
  }
  Vec4 eq;
  eq[0] = K * (1 - 1 / r0);
  eq[1] = (1 - p.nu) * p.nu_E * eq[0] / p.delta_M;
  eq[2] = p.nu * p.nu_E * eq[0] / (p.eta1 + p.delta_Y);
  eq[3] = p.eta1 * eq[2] / p.delta_F;
  return eq;
}

LoadedParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open parameter file: " + path.string());
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw std::runtime_error("parameter file must hold a JSON object: " + path.string());
  }

  static const std::set<std::string> keys = {
      "beta_E",  "nu_E", "delta_E", "delta_M", "delta_Y", "delta_F",
      "delta_U", "delta_s", "nu",   "eta1",    "eta2",    "K"};
  for (const auto& [key, value] : doc.items()) {
    if (!keys.count(key)) {
      throw std::runtime_error("unknown parameter key \"" + key + "\" in " +
                               path.string());
    }
  }
  for (const auto& key : keys) {
    if (!doc.contains(key)) {
      throw std::runtime_error("missing parameter key \"" + key + "\" in " +
                               path.string());
    }
  }

  auto number = [&](const char* key) {
    const auto& v = doc.at(key);
    if (!v.is_number()) {
      throw std::runtime_error(std::string("parameter \"") + key +
                               "\" must be a number in " + path.string());
    }
    return v.get<double>();
  };

  ModelParams p{};
  p.beta_E = number("beta_E");
  p.nu_E = number("nu_E");
  p.delta_E = number("delta_E");
  p.delta_M = number("delta_M");
  p.delta_Y = number("delta_Y");
  p.delta_F = number("delta_F");
  p.delta_U = number("delta_U");
  p.delta_s = number("delta_s");
  p.nu = number("nu");
  p.eta1 = number("eta1");
  p.eta2 = number("eta2");

  const auto& K = doc.at("K");
  if (K.is_string()) {
    if (K.get<std::string>() != "inf") {
      throw std::runtime_error("parameter \"K\" must be a number or \"inf\" in " +
                               path.string());
    }
    p.K = std::nullopt;
  } else if (K.is_number()) {
    p.K = K.get<double>();
  } else {
    throw std::runtime_error("parameter \"K\" must be a number or \"inf\" in " +
                             path.string());
  }

  try {
    validate(p);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("invalid parameters in " + path.string() + ": " + e.what());
  }

  LoadedParams out{p, {}};
  if (basic_offspring_number(p) <= 1) {
    std::ostringstream msg;
    msg << "basic offspring number " << basic_offspring_number(p)
        << " <= 1: the wild population dies out on its own; stabilization "
           "scenarios are not applicable";
    out.warnings.push_back(msg.str());
  }
  return out;
}

}  // namespace sitstab::model
