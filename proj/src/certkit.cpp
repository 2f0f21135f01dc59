#include "sitstab/certkit.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sitstab::certkit {

namespace {

void check_dims(const LpvSystem& sys) {
  const int n = sys.state_dim();
  if (sys.A.cols() != n) throw std::invalid_argument("A must be square");
  if (sys.C.cols() != n) throw std::invalid_argument("C column count must match A");
  if (sys.D.rows() != 0 && sys.D.rows() != n) {
    throw std::invalid_argument("D row count must match A");
  }
  for (const auto& term : sys.terms) {
    if (term.B.rows() != n || term.B.cols() != n) {
      throw std::invalid_argument("every B term must match A's shape");
    }
    if (term.param < 0 || term.param >= sys.param_count()) {
      throw std::invalid_argument("B term refers to a parameter without box bounds");
    }
  }
  for (const auto& [lo, hi] : sys.box) {
    if (!(lo <= hi)) throw std::invalid_argument("parameter box has lo > hi");
  }
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& X) {
  return (X + X.transpose()) / 2;
}

// Deterministic generator independent of library distributions, so that
// synthesis output is reproducible byte for byte across reruns.
struct SplitMix64 {
  std::uint64_t s;
  explicit SplitMix64(std::uint64_t seed) : s(seed) {}
  std::uint64_t next() {
    s += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  double uniform() {  // in (0,1)
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
  }
  double normal() {
    const double u = uniform(), v = uniform();
    return std::sqrt(-2 * std::log(u)) * std::cos(2 * M_PI * v);
  }
};

}  // namespace

Eigen::MatrixXd lpv_matrix_at(const LpvSystem& sys, const Eigen::VectorXd& rho) {
  check_dims(sys);
  if (rho.size() != sys.param_count()) {
    throw std::invalid_argument("parameter vector length mismatch");
  }
  Eigen::MatrixXd M = sys.A;
  for (const auto& term : sys.terms) M += rho[term.param] * term.B;
  return M;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> sym_eigen(const Eigen::MatrixXd& S) {
  if (S.rows() != S.cols()) throw std::invalid_argument("sym_eigen: matrix not square");
  const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("sym_eigen: matrix not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetrize(S));
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("sym_eigen: eigensolver failed to converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

std::vector<Eigen::MatrixXd> enumerate_vertices(const LpvSystem& sys, int cap) {
  check_dims(sys);
  std::vector<int> free_params;
  for (int k = 0; k < sys.param_count(); ++k) {
    if (sys.box[k][0] < sys.box[k][1]) free_params.push_back(k);
  }
  const int nf = static_cast<int>(free_params.size());
  if (nf > cap) {
    std::ostringstream msg;
    msg << "vertex enumeration over " << nf << " parameters exceeds the cap of " << cap;
    throw std::invalid_argument(msg.str());
  }
  Eigen::VectorXd rho(sys.param_count());
  for (int k = 0; k < sys.param_count(); ++k) rho[k] = sys.box[k][0];

  std::vector<Eigen::MatrixXd> vertices;
  vertices.reserve(std::size_t(1) << nf);
  for (std::uint64_t mask = 0; mask < (std::uint64_t(1) << nf); ++mask) {
    for (int j = 0; j < nf; ++j) {
      const int k = free_params[j];
      rho[k] = (mask >> j) & 1 ? sys.box[k][1] : sys.box[k][0];
    }
    vertices.push_back(lpv_matrix_at(sys, rho));
  }
  return vertices;
}

Eigen::MatrixXd lmi_residual(const Eigen::MatrixXd& A_eta, const Eigen::MatrixXd& C,
                             const Certificate& cert) {
  const int n = static_cast<int>(A_eta.rows());
  if (A_eta.cols() != n || cert.P.rows() != n || cert.P.cols() != n ||
      C.cols() != n || cert.R.rows() != C.rows() || cert.R.cols() != n) {
    throw std::invalid_argument("lmi_residual: dimension mismatch");
  }
  const Eigen::MatrixXd X = A_eta.transpose() * cert.P + cert.P * A_eta -
                            C.transpose() * cert.R - cert.R.transpose() * C +
                            cert.xi * Eigen::MatrixXd::Identity(n, n);
  return symmetrize(X);
}

Verdict verify_certificate(const LpvSystem& sys, const Certificate& cert) {
  Verdict v;
  const auto P_eigs = sym_eigen(cert.P).first;
  v.min_P_eig = P_eigs.minCoeff();
  v.worst_eig = -std::numeric_limits<double>::infinity();
  for (const auto& A_eta : enumerate_vertices(sys)) {
    const double lam = sym_eigen(lmi_residual(A_eta, sys.C, cert)).first.maxCoeff();
    v.per_vertex.push_back(lam);
    v.worst_eig = std::max(v.worst_eig, lam);
  }
  v.feasible = v.min_P_eig > 0 && v.worst_eig < 0;
  return v;
}

Eigen::MatrixXd gain_from_certificate(const Certificate& cert) {
  const auto [evals, evecs] = sym_eigen(cert.P);
  if (!(evals.minCoeff() > 0)) {
    throw std::domain_error("gain extraction needs a positive definite P");
  }
  if (evals.maxCoeff() / evals.minCoeff() > 1e12) {
    throw std::domain_error("gain extraction: P is numerically singular");
  }
  return cert.P.ldlt().solve(cert.R.transpose());
}

Certificate synthesize_certificate(const LpvSystem& sys, double xi,
                                   const SynthesisOptions& options) {
  check_dims(sys);
  if (!(xi > 0)) throw std::invalid_argument("xi must be positive");
  const int n = sys.state_dim();
  const int m = sys.output_dim();
  const auto vertices = enumerate_vertices(sys);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

  // Worst-vertex eigenvalue of sym(A'P + PA - C'R - R'C) + 2*shift*P and a
  // subgradient direction from the top eigenvector of the worst vertex.
  auto objective = [&](const Eigen::MatrixXd& P, const Eigen::MatrixXd& R, double shift,
                       Eigen::MatrixXd* gP, Eigen::MatrixXd* gR) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& Av : vertices) {
      Eigen::MatrixXd X = symmetrize(Av.transpose() * P + P * Av -
                                     sys.C.transpose() * R - R.transpose() * sys.C);
      if (shift != 0) X += 2 * shift * P;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X);
      const double lam = es.eigenvalues().maxCoeff();
      if (lam > worst) {
        worst = lam;
        if (gP) {
          const Eigen::VectorXd v = es.eigenvectors().col(n - 1);
          const Eigen::MatrixXd vvT = v * v.transpose();
          *gP = 2 * symmetrize(Av * vvT) + 2 * shift * vvT;
          *gR = -2 * (sys.C * v) * v.transpose();
        }
      }
    }
    return worst;
  };

  SplitMix64 rng(options.seed);
  double best = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd bestP, bestR;

  for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
    Eigen::MatrixXd P = I;
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, n);
    if (restart > 0) {
      Eigen::MatrixXd noise(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) noise(i, j) = rng.normal();
      P += 0.05 * symmetrize(noise);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) R(i, j) = 0.2 * rng.normal();
    }
    for (int t = 0; t < options.iters; ++t) {
      Eigen::MatrixXd gP, gR;
      const double g = objective(P, R, options.rate_shift, &gP, &gR);
      if (g < best) {
        best = g;
        bestP = P;
        bestR = R;
      }
      const double lr = options.lr0 / std::sqrt(1.0 + t);
      P -= lr * gP;
      R -= lr * gR;
      // Projection: symmetric, eigenvalues floored, trace pinned to n. R is
      // rescaled along so the implied gain is unchanged by the normalization.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(P));
      const Eigen::VectorXd floored = es.eigenvalues().cwiseMax(options.eig_floor);
      P = es.eigenvectors() * floored.asDiagonal() * es.eigenvectors().transpose();
      const double s = n / P.trace();
      P *= s;
      R *= s;
      if (options.gain_cap > 0) {
        const double rn = R.norm();
        if (rn > options.gain_cap) R *= options.gain_cap / rn;
      }
    }
    if (best < options.stop_at) break;
  }

  Certificate cert{bestP, bestR, xi};
  const double plain = objective(bestP, bestR, 0.0, nullptr, nullptr);
  if (!(plain < 0)) {
    std::ostringstream msg;
    msg << "synthesis failed after max iterations; best residual eigenvalue " << plain;
    throw std::domain_error(msg.str());
  }
  const double scale = (xi + options.margin) / (-plain);
  cert.P *= scale;
  cert.R *= scale;
  const Verdict verdict = verify_certificate(sys, cert);
  if (!verdict.feasible || verdict.margin() < options.margin * (1 - 1e-9)) {
    std::ostringstream msg;
    msg << "synthesis failed to reach the requested margin; achieved "
        << verdict.margin();
    throw std::domain_error(msg.str());
  }
  return cert;
}

namespace {

Eigen::MatrixXd matrix_from_flat(const nlohmann::json& arr, int rows, int cols,
                                 const std::string& what) {
  if (!arr.is_array() || static_cast<int>(arr.size()) != rows * cols) {
    throw std::runtime_error(what + " must be a flat row-major array of " +
                             std::to_string(rows * cols) + " numbers");
  }
  Eigen::MatrixXd M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const auto& v = arr[i * cols + j];
      if (!v.is_number()) throw std::runtime_error(what + " must hold numbers only");
      M(i, j) = v.get<double>();
    }
  }
  return M;
}

nlohmann::json matrix_to_flat(const Eigen::MatrixXd& M) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < M.rows(); ++i) {
    for (int j = 0; j < M.cols(); ++j) arr.push_back(M(i, j));
  }
  return arr;
}

}  // namespace

Certificate load_certificate(const std::filesystem::path& path, int rows_R) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open certificate file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw std::runtime_error("certificate file must hold a JSON object");
  }
  for (const auto& [key, value] : doc.items()) {
    if (key != "P" && key != "R" && key != "xi") {
      throw std::runtime_error("unknown certificate key \"" + key + "\" in " +
                               path.string());
    }
  }
  if (!doc.contains("P")) throw std::runtime_error("certificate lacks \"P\"");
  const auto& parr = doc.at("P");
  if (!parr.is_array()) throw std::runtime_error("certificate \"P\" must be an array");
  const int n = static_cast<int>(std::llround(std::sqrt(double(parr.size()))));
  if (n * n != static_cast<int>(parr.size()) || n == 0) {
    throw std::runtime_error("certificate \"P\" length must be a positive square");
  }
  Certificate cert;
  cert.P = matrix_from_flat(parr, n, n, "certificate \"P\"");
  if (doc.contains("R")) {
    const auto& rarr = doc.at("R");
    if (!rarr.is_array() || rarr.size() % n != 0) {
      throw std::runtime_error("certificate \"R\" length must be a multiple of n");
    }
    cert.R = matrix_from_flat(rarr, static_cast<int>(rarr.size()) / n, n,
                              "certificate \"R\"");
  } else {
    cert.R = Eigen::MatrixXd::Zero(rows_R, n);
  }
  if (doc.contains("xi")) {
    if (!doc.at("xi").is_number() || !(doc.at("xi").get<double>() > 0)) {
      throw std::runtime_error("certificate \"xi\" must be a positive number");
    }
    cert.xi = doc.at("xi").get<double>();
  }
  return cert;
}

void save_certificate(const Certificate& cert, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["P"] = matrix_to_flat(cert.P);
  doc["R"] = matrix_to_flat(cert.R);
  doc["xi"] = cert.xi;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write certificate file: " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace sitstab::certkit
