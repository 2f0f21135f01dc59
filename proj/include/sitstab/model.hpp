#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sitstab::model {

using Vec4 = Eigen::Matrix<double, 4, 1>;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// State order used throughout: (E, M, Y, F, U, Ms).
//   E  eggs / aquatic stage
//   M  fertile adult males
//   Y  young (not yet mated) females
//   F  fertile (mated with M) females
//   U  sterilized (mated with Ms) females
//   Ms released sterile males
enum StateIndex : int { iE = 0, iM = 1, iY = 2, iF = 3, iU = 4, iMs = 5 };

struct ModelParams {
  double beta_E;   // oviposition rate [1/day]
  double nu_E;     // hatching rate [1/day]
  double delta_E;  // aquatic-stage death rate [1/day]
  double delta_M;  // fertile-male death rate [1/day]
  double delta_Y;  // young-female death rate [1/day]
  double delta_F;  // fertile-female death rate [1/day]
  double delta_U;  // sterilized-female death rate [1/day]
  double delta_s;  // sterile-male death rate [1/day]
  double nu;       // emergence probability, in (0,1)
  double eta1;     // fertile mating transfer rate [1/day]
  double eta2;     // sterile mating transfer rate [1/day]
  // Environmental capacity; disengaged (std::nullopt) selects the
  // unbounded-capacity egg equation dE/dt = beta_E * F.
  std::optional<double> K;

  double delta_eta() const { return eta1 - eta2; }
  bool finite_capacity() const { return K.has_value(); }
};

// Throws std::invalid_argument on any violated parameter constraint:
// positive rates, nu in (0,1), eta1 >= eta2 >= 0, delta_s >= delta_M,
// K > 0 when finite.
void validate(const ModelParams& p);

// Mating fractions M/(M+Ms) and Ms/(M+Ms). Both are defined as 0 on the
// male-free face M+Ms = 0, which keeps the vector field single-valued there
// and matches the selection used for the extinct equilibrium.
template <class Scalar>
Scalar male_fraction(Scalar m, Scalar ms) {
  const Scalar tot = m + ms;
  return tot > Scalar(0) ? m / tot : Scalar(0);
}

namespace detail {
inline void require_finite(std::initializer_list<double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) + ": non-finite component");
    }
  }
}
}  // namespace detail

// Controlled six-compartment field. The Y equation carries the split
// -delta_eta*fm*Y - (eta2+delta_Y)*Y, which reduces to -(eta1+delta_Y)*Y
// when all males are fertile (fm = 1).
template <class D>
Eigen::Matrix<typename D::Scalar, 6, 1> rhs_controlled(
    const Eigen::MatrixBase<D>& x, typename D::Scalar u, const ModelParams& p) {
  using Scalar = typename D::Scalar;
  static_assert(D::RowsAtCompileTime == 6 || D::RowsAtCompileTime == Eigen::Dynamic);
  const Scalar E = x[iE], M = x[iM], Y = x[iY], F = x[iF], U = x[iU], Ms = x[iMs];
  if constexpr (std::is_same_v<Scalar, double>) {
    detail::require_finite({E, M, Y, F, U, Ms}, "rhs_controlled state");
    if (!std::isfinite(u) || u < 0) throw std::invalid_argument("rhs_controlled: bad control");
  }
  const Scalar fm = male_fraction(M, Ms);
  const Scalar fs = male_fraction(Ms, M);
  Eigen::Matrix<Scalar, 6, 1> dx;
  dx[iE] = p.finite_capacity() ? p.beta_E * F * (Scalar(1) - E / *p.K) : p.beta_E * F;
  dx[iE] -= (p.delta_E + p.nu_E) * E;
  dx[iM] = (1 - p.nu) * p.nu_E * E - p.delta_M * M;
  dx[iY] = p.nu * p.nu_E * E - p.delta_eta() * fm * Y - (p.eta2 + p.delta_Y) * Y;
  dx[iF] = p.eta1 * fm * Y - p.delta_F * F;
  dx[iU] = p.eta2 * fs * Y - p.delta_U * U;
  dx[iMs] = u - p.delta_s * Ms;
  return dx;
}

// No-release field on (E, M, Y, F): every young female mates fertile, so the
// Y outflow rate is eta1 + delta_Y. Requires finite capacity.
template <class D>
Eigen::Matrix<typename D::Scalar, 4, 1> rhs_uncontrolled(
    const Eigen::MatrixBase<D>& x4, const ModelParams& p) {
  using Scalar = typename D::Scalar;
  if (!p.finite_capacity()) {
    throw std::invalid_argument("rhs_uncontrolled: requires finite capacity");
  }
  const Scalar E = x4[0], M = x4[1], Y = x4[2], F = x4[3];
  if constexpr (std::is_same_v<Scalar, double>) {
    detail::require_finite({E, M, Y, F}, "rhs_uncontrolled state");
  }
  Eigen::Matrix<Scalar, 4, 1> dx;
  dx[0] = p.beta_E * F * (Scalar(1) - E / *p.K) - (p.delta_E + p.nu_E) * E;
  dx[1] = (1 - p.nu) * p.nu_E * E - p.delta_M * M;
  dx[2] = p.nu * p.nu_E * E - (p.eta1 + p.delta_Y) * Y;
  dx[3] = p.eta1 * Y - p.delta_F * F;
  return dx;
}

// Mean viable offspring per female over her lifetime without releases.
// Values above 1 mean the wild population persists.
double basic_offspring_number(const ModelParams& p);

// Offspring number under the proportional sterile-male pressure Ms = theta*M.
// Strictly decreasing in theta.
double offspring_number_theta(const ModelParams& p, double theta);

// The release ratio above which the proportional offspring number drops
// below 1, in closed form. Non-positive when no release is needed
// (basic offspring number <= 1).
double theta_threshold(const ModelParams& p);

// Positive steady state (E*, M*, Y*, F*) of the no-release model; only
// exists for basic offspring number > 1. Throws std::domain_error otherwise.
Vec4 persistence_equilibrium(const ModelParams& p, double K);

struct LoadedParams {
  ModelParams params;
  std::vector<std::string> warnings;
};

// Reads a parameter JSON document with exactly the keys
//   beta_E, nu_E, delta_E, delta_M, delta_Y, delta_F, delta_U, delta_s,
//   nu, eta1, eta2, K
// where K is a positive number or the string "inf". Unknown keys are
// rejected. Violated hard constraints throw; a basic offspring number <= 1
// only produces a warning since the model stays simulable.
LoadedParams load_params(const std::filesystem::path& path);

}  // namespace sitstab::model
