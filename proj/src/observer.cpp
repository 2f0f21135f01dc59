#include "sitstab/observer.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace sitstab::observer {

certkit::LpvSystem build_sit_lpv(const model::ModelParams& p) {
  model::validate(p);
  if (p.finite_capacity()) {
    throw std::invalid_argument(
        "the linear observer model needs unbounded larval capacity");
  }
  certkit::LpvSystem sys;
  sys.A = Eigen::MatrixXd::Zero(6, 6);
  sys.A(model::iE, model::iE) = -(p.delta_E + p.nu_E);
  sys.A(model::iE, model::iF) = p.beta_E;
  sys.A(model::iM, model::iE) = (1 - p.nu) * p.nu_E;
  sys.A(model::iM, model::iM) = -p.delta_M;
  sys.A(model::iY, model::iE) = p.nu * p.nu_E;
  sys.A(model::iY, model::iY) = -(p.eta2 + p.delta_Y);
  sys.A(model::iF, model::iF) = -p.delta_F;
  sys.A(model::iU, model::iU) = -p.delta_U;
  sys.A(model::iMs, model::iMs) = -p.delta_s;

  // The mating split enters affinely in kappa = M / (M + Ms). Writing the
  // kappa-dependent part as offset + kappa * direction keeps the vertex set
  // at two matrices: the offset's box is the degenerate point {1}.
  Eigen::MatrixXd B_off = Eigen::MatrixXd::Zero(6, 6);
  B_off(model::iU, model::iY) = p.eta2;
  Eigen::MatrixXd B_kappa = Eigen::MatrixXd::Zero(6, 6);
  B_kappa(model::iY, model::iY) = -p.delta_eta();
  B_kappa(model::iF, model::iY) = p.eta1;
  B_kappa(model::iU, model::iY) = -p.eta2;
  sys.terms.push_back({B_off, 0});
  sys.terms.push_back({B_kappa, 1});
  sys.box = {{1.0, 1.0}, {0.0, 1.0}};

  sys.C = Eigen::MatrixXd::Zero(2, 6);
  sys.C(0, model::iM) = 1.0;
  sys.C(1, model::iMs) = 1.0;
  sys.D = Eigen::MatrixXd::Zero(6, 1);
  sys.D(model::iMs, 0) = 1.0;
  return sys;
}

double kappa_of_output(const SitOutput& y) {
  if (!(y.y1 >= 0) || !(y.y2 >= 0)) {
    throw std::invalid_argument("measured male counts must be nonnegative");
  }
  const double tot = y.y1 + y.y2;
  return tot > 0 ? y.y1 / tot : 0.0;
}

ObserverState observer_rhs(const ObserverState& x_hat, const SitOutput& y, double u,
                           const Mat62& L, const certkit::LpvSystem& sys) {
  Eigen::VectorXd rho(2);
  rho << 1.0, kappa_of_output(y);
  const Eigen::Vector2d innovation =
      sys.C * x_hat - Eigen::Vector2d(y.y1, y.y2);
  return certkit::lpv_matrix_at(sys, rho) * x_hat + sys.D.col(0) * u -
         L * innovation;
}

Mat62 load_gain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open gain file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("L")) {
    throw std::runtime_error("gain file must hold an object with key \"L\"");
  }
  for (const auto& [key, value] : doc.items()) {
    if (key != "L") {
      throw std::runtime_error("unknown gain key \"" + key + "\" in " + path.string());
    }
  }
  const auto& arr = doc.at("L");
  if (!arr.is_array() || arr.size() != 12) {
    throw std::runtime_error("gain \"L\" must be a flat row-major array of 12 numbers");
  }
  Mat62 L;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 2; ++j) {
      const auto& v = arr[i * 2 + j];
      if (!v.is_number()) throw std::runtime_error("gain \"L\" must hold numbers only");
      L(i, j) = v.get<double>();
    }
  }
  return L;
}

void save_gain(const Mat62& L, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 2; ++j) arr.push_back(L(i, j));
  }
  nlohmann::json doc;
  doc["L"] = arr;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write gain file: " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace sitstab::observer
