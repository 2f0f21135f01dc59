#include <doctest.h>

#include "sitstab/model.hpp"
#include "sitstab/observer.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace sitstab;

namespace {

model::ModelParams unbounded_baseline() {
  model::ModelParams p{};
  p.beta_E = 10;
  p.nu_E = 0.05;
  p.delta_E = 0.03;
  p.delta_M = 0.1;
  p.delta_Y = 0.04;
  p.delta_F = 0.04;
  p.delta_U = 0.04;
  p.delta_s = 0.12;
  p.nu = 0.49;
  p.eta1 = 1;
  p.eta2 = 0.7;
  return p;
}

}  // namespace

TEST_CASE("plant matrix places the oviposition coupling in the fertile column") {
  const auto p = unbounded_baseline();
  const auto sys = observer::build_sit_lpv(p);
  REQUIRE(sys.A.rows() == 6);
  REQUIRE(sys.A.cols() == 6);

  CHECK(sys.A(model::iE, model::iE) == doctest::Approx(-0.08));
  CHECK(sys.A(model::iE, model::iF) == 10.0);
  CHECK(sys.A(model::iE, model::iU) == 0.0);  // sterilized females lay no eggs
  CHECK(sys.A(model::iM, model::iE) == doctest::Approx(0.0255));
  CHECK(sys.A(model::iM, model::iM) == -0.1);
  CHECK(sys.A(model::iY, model::iE) == doctest::Approx(0.0245));
  CHECK(sys.A(model::iY, model::iY) == -0.74);
  CHECK(sys.A(model::iF, model::iF) == -0.04);
  CHECK(sys.A(model::iU, model::iU) == -0.04);
  CHECK(sys.A(model::iMs, model::iMs) == -0.12);

  REQUIRE(sys.C.rows() == 2);
  CHECK(sys.C(0, model::iM) == 1.0);
  CHECK(sys.C(1, model::iMs) == 1.0);
  CHECK(sys.C.cwiseAbs().sum() == 2.0);
  REQUIRE(sys.D.rows() == 6);
  REQUIRE(sys.D.cols() == 1);
  CHECK(sys.D(model::iMs, 0) == 1.0);
  CHECK(sys.D.cwiseAbs().sum() == 1.0);

  auto finite = p;
  finite.K = 21000;
  CHECK_THROWS_AS(observer::build_sit_lpv(finite), std::invalid_argument);
}

TEST_CASE("mating split spans exactly two vertices") {
  const auto p = unbounded_baseline();
  const auto sys = observer::build_sit_lpv(p);
  const auto vertices = certkit::enumerate_vertices(sys);
  REQUIRE(vertices.size() == 2);

  // kappa = 0: every mating is sterile; the fertile transfer is absent.
  const Eigen::MatrixXd& A0 = vertices[0];
  CHECK(A0(model::iY, model::iY) == doctest::Approx(-0.74));
  CHECK(A0(model::iF, model::iY) == 0.0);
  CHECK(A0(model::iU, model::iY) == doctest::Approx(0.7));

  // kappa = 1: every mating is fertile.
  const Eigen::MatrixXd& A1 = vertices[1];
  CHECK(A1(model::iY, model::iY) == doctest::Approx(-1.04));
  CHECK(A1(model::iF, model::iY) == doctest::Approx(1.0));
  CHECK(A1(model::iU, model::iY) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("parameter-varying form reproduces the nonlinear field") {
  const auto p = unbounded_baseline();
  const auto sys = observer::build_sit_lpv(p);
  std::mt19937 rng(73);
  std::uniform_real_distribution<double> mag(0.0, 1e5);
  for (int i = 0; i < 20; ++i) {
    model::Vec6 x;
    for (int j = 0; j < 6; ++j) x[j] = mag(rng);
    if (i == 0) {
      // Male-free face: both mating fractions vanish, so the mixing weight 0
      // represents the field exactly once no young females are waiting.
      x[model::iM] = x[model::iMs] = 0;
      x[model::iY] = 0;
    }
    const double u = mag(rng);
    const observer::SitOutput y{x[model::iM], x[model::iMs]};
    Eigen::VectorXd rho(2);
    rho << 1.0, observer::kappa_of_output(y);
    const Eigen::VectorXd lin = certkit::lpv_matrix_at(sys, rho) * x + sys.D.col(0) * u;
    const model::Vec6 nl = model::rhs_controlled(x, u, p);
    for (int j = 0; j < 6; ++j) {
      CHECK(lin[j] ==
            doctest::Approx(nl[j]).epsilon(1e-12).scale(std::abs(nl[j]) + 1.0));
    }
  }
}

TEST_CASE("output map and its mixing weight") {
  CHECK(observer::kappa_of_output({0, 0}) == 0.0);
  CHECK(observer::kappa_of_output({3, 1}) == doctest::Approx(0.75));
  CHECK(observer::kappa_of_output({0, 5}) == 0.0);
  CHECK(observer::kappa_of_output({5, 0}) == 1.0);
  CHECK_THROWS_AS(observer::kappa_of_output({-1, 2}), std::invalid_argument);
}

TEST_CASE("correction term and error dynamics") {
  const auto p = unbounded_baseline();
  const auto sys = observer::build_sit_lpv(p);
  observer::Mat62 L;
  L.setZero();
  L(0, 0) = 2.0;
  L(5, 1) = 0.5;

  std::mt19937 rng(79);
  std::uniform_real_distribution<double> mag(0.0, 1e4);
  for (int i = 0; i < 50; ++i) {
    model::Vec6 x, xh;
    for (int j = 0; j < 6; ++j) {
      x[j] = mag(rng);
      xh[j] = mag(rng);
    }
    x[model::iM] += 1;  // keep the measured mixing weight well defined
    const double u = mag(rng);
    const observer::SitOutput y{x[model::iM], x[model::iMs]};

    // Matched estimate: the correction vanishes and the estimator runs the
    // plant model exactly.
    const model::Vec6 match = observer::observer_rhs(x, y, u, L, sys);
    const model::Vec6 truth = model::rhs_controlled(x, u, p);
    for (int j = 0; j < 6; ++j) {
      CHECK(match[j] ==
            doctest::Approx(truth[j]).epsilon(1e-12).scale(std::abs(truth[j]) + 1.0));
    }

    // Mismatched estimate: the error obeys (A(kappa) - L C) e with the
    // plant-measured mixing weight.
    const model::Vec6 dxh = observer::observer_rhs(xh, y, u, L, sys);
    Eigen::VectorXd rho(2);
    rho << 1.0, observer::kappa_of_output(y);
    const Eigen::MatrixXd Ak = certkit::lpv_matrix_at(sys, rho);
    const Eigen::VectorXd expected = (Ak - L * sys.C) * (xh - x);
    const Eigen::VectorXd got = dxh - truth;
    for (int j = 0; j < 6; ++j) {
      CHECK(got[j] ==
            doctest::Approx(expected[j]).epsilon(1e-10).scale(std::abs(expected[j]) + 1.0));
    }
  }
}

TEST_CASE("steady release point is stationary for plant and estimator") {
  const auto p = unbounded_baseline();
  const auto sys = observer::build_sit_lpv(p);
  observer::Mat62 L;
  L.setConstant(0.3);
  const double u = 5000.0;
  model::Vec6 star = model::Vec6::Zero();
  star[model::iMs] = u / p.delta_s;

  const model::Vec6 plant_rate = model::rhs_controlled(star, u, p);
  CHECK(plant_rate.cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).scale(star[model::iMs]).epsilon(1e-14));

  const observer::SitOutput y{star[model::iM], star[model::iMs]};
  const model::Vec6 est_rate = observer::observer_rhs(star, y, u, L, sys);
  CHECK(est_rate.cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).scale(star[model::iMs]).epsilon(1e-14));
}

TEST_CASE("gain files load, validate, and round-trip") {
  const auto L =
      observer::load_gain(std::filesystem::path(DATA_DIR) / "reference_gain.json");
  CHECK(L(0, 0) == 50.6342);
  CHECK(L(1, 0) == 1.4150);
  CHECK(L(2, 0) == 0.9426);
  CHECK(L(3, 0) == 2.6547);
  CHECK(L(4, 0) == 1.6023);
  CHECK(L(5, 0) == 0.0);
  CHECK(L(5, 1) == 0.3800);
  CHECK(L.col(1).head<5>().cwiseAbs().maxCoeff() == 0.0);

  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "sitstab_gain_roundtrip.json";
  observer::save_gain(L, path);
  const auto back = observer::load_gain(path);
  CHECK((back.array() == L.array()).all());

  auto write = [&](const char* name, const char* body) {
    const auto fp = dir / name;
    std::ofstream out(fp);
    out << body;
    return fp;
  };
  CHECK_THROWS_AS(observer::load_gain(write("sitstab_gain_short.json",
                                            R"({"L": [1,2,3]})")),
                  std::runtime_error);
  CHECK_THROWS_AS(observer::load_gain(write("sitstab_gain_extra.json",
                                            R"({"L": [0,0,0,0,0,0,0,0,0,0,0,0], "M": 1})")),
                  std::runtime_error);
  CHECK_THROWS_AS(observer::load_gain(write("sitstab_gain_nol.json", R"({})")),
                  std::runtime_error);
  CHECK_THROWS_AS(observer::load_gain(dir / "sitstab_gain_missing.json"),
                  std::runtime_error);
}
