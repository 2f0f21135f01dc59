#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace sitstab::certkit {

// Linear system with a parameter-affine perturbation B(rho) = sum of
// rho[term.param] * term.B over the terms, each parameter confined to a box
// interval. A constant offset is expressed as a term whose parameter box is
// degenerate ([1,1]); degenerate parameters do not multiply the vertex count.
struct LpvTerm {
  Eigen::MatrixXd B;
  int param = 0;
};

struct LpvSystem {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd C;  // m x n output map
  Eigen::MatrixXd D;  // n x p input map
  std::vector<LpvTerm> terms;
  std::vector<std::array<double, 2>> box;  // [lo, hi] per parameter

  int state_dim() const { return static_cast<int>(A.rows()); }
  int output_dim() const { return static_cast<int>(C.rows()); }
  int param_count() const { return static_cast<int>(box.size()); }
};

// A + B(rho) for a full parameter vector rho.
Eigen::MatrixXd lpv_matrix_at(const LpvSystem& sys, const Eigen::VectorXd& rho);

// Quadratic-form certificate for exponential observer-error decay. The gain
// is recovered as L = P^{-1} R^T.
struct Certificate {
  Eigen::MatrixXd P;  // n x n symmetric positive definite
  Eigen::MatrixXd R;  // m x n
  double xi = 1.0;    // decay margin: error energy loses xi*|e|^2 per unit time
};

// Eigen-decomposition of a symmetric matrix: eigenvalues ascending with an
// orthonormal eigenvector matrix. Rejects inputs whose asymmetry exceeds
// 1e-10 relative to the matrix scale.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> sym_eigen(const Eigen::MatrixXd& S);

// All corner matrices A + B(corner) of the parameter box. Degenerate
// intervals (lo == hi) collapse to a single choice. Throws when the number
// of non-degenerate parameters exceeds the cap.
std::vector<Eigen::MatrixXd> enumerate_vertices(const LpvSystem& sys, int cap = 20);

// Symmetrized stability residual A_eta'P + P*A_eta - C'R - R'C + xi*I.
// Negative definiteness at every vertex certifies exponential error decay.
Eigen::MatrixXd lmi_residual(const Eigen::MatrixXd& A_eta, const Eigen::MatrixXd& C,
                             const Certificate& cert);

struct Verdict {
  bool feasible = false;
  double worst_eig = 0;               // max over vertices of lambda_max(residual)
  std::vector<double> per_vertex;     // lambda_max per vertex, vertex order
  double min_P_eig = 0;
  double margin() const { return -worst_eig; }
};

// Feasible iff P is positive definite and every vertex residual is negative
// definite. Never throws on an infeasible certificate; the verdict carries
// the detail.
Verdict verify_certificate(const LpvSystem& sys, const Certificate& cert);

// Solves P*L = R^T. Throws std::domain_error when P is not positive definite
// or its eigenvalue spread exceeds 1e12 (numerically singular).
Eigen::MatrixXd gain_from_certificate(const Certificate& cert);

struct SynthesisOptions {
  std::uint64_t seed = 20240901;
  int restarts = 8;
  int iters = 6000;
  double lr0 = 0.3;        // subgradient step scale, decays as 1/sqrt(iter)
  double margin = 1e-4;    // required verified margin of the result
  double rate_shift = 0;   // target decay rate of e'Pe relative to P itself;
                           // 0 asks only for strict feasibility
  double gain_cap = 0;     // Frobenius cap on R during descent (0 = uncapped);
                           // bounds the recovered gain, keeping the observer
                           // non-stiff for explicit integration
  double eig_floor = 1e-4; // eigenvalue floor applied to P each step
  double stop_at = -5e-4;  // restart loop exits once the objective is this good
};

// Projected subgradient descent on (P, R) minimizing the worst vertex
// eigenvalue of the (rate-shifted) residual without its xi*I part; P is
// re-symmetrized, eigenvalue-floored, and trace-normalized each step. The
// result is scaled so verify_certificate reports at least options.margin.
// Deterministic for a fixed options value. Throws std::domain_error with the
// best residual found when no strictly negative objective is reached.
Certificate synthesize_certificate(const LpvSystem& sys, double xi,
                                   const SynthesisOptions& options = {});

// Certificate JSON: {"P": row-major n*n numbers, "R": row-major m*n, "xi":
// number}, written with full precision. R may be omitted on load (treated
// as zero, m taken from `rows_R`); unknown keys are rejected.
Certificate load_certificate(const std::filesystem::path& path, int rows_R = 2);
void save_certificate(const Certificate& cert, const std::filesystem::path& path);

}  // namespace sitstab::certkit
