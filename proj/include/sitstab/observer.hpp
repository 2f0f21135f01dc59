#pragma once

#include <Eigen/Dense>

#include <filesystem>

#include "sitstab/certkit.hpp"
#include "sitstab/model.hpp"

namespace sitstab::observer {

using model::ModelParams;
using model::Vec6;
using Mat62 = Eigen::Matrix<double, 6, 2>;

// Measured output: fertile and sterile male counts.
struct SitOutput {
  double y1 = 0;  // M
  double y2 = 0;  // Ms
};

// Estimate vector (Ehat, Mhat, Yhat, Fhat, Uhat, Mshat). Components may go
// negative during transients; clamping happens only at the controller.
using ObserverState = Vec6;

// Parameter-affine form of the unbounded-capacity controlled model, with the
// mating pressure kappa = M/(M+Ms) as the single box parameter on [0,1]:
//   A carries all linear rates (egg recruitment beta_E couples E to the
//   fertile females F), one degenerate term carries the constant eta2 feed
//   from Y to U, and the kappa term moves it between the fertile and
//   sterilized channels. Exactly two vertices result. Requires unbounded K.
certkit::LpvSystem build_sit_lpv(const ModelParams& p);

// Measured mating pressure y1/(y1+y2), defined as 0 when no males are
// observed (matching the model's male-free-face convention).
double kappa_of_output(const SitOutput& y);

// Estimate derivative: model field at the measured parameter, plus the
// output-error injection -L(C*x_hat - y). Estimates are never clamped here.
Vec6 observer_rhs(const ObserverState& x_hat, const SitOutput& y, double u,
                  const Mat62& L, const certkit::LpvSystem& sys);

// Standalone gain JSON: {"L": row-major 6x2 numbers}. Unknown keys rejected.
Mat62 load_gain(const std::filesystem::path& path);
void save_gain(const Mat62& L, const std::filesystem::path& path);

}  // namespace sitstab::observer
