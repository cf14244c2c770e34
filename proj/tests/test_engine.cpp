#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "fedga/engine.hpp"
#include "fedga/experiments.hpp"
#include "fedga/gauss.hpp"
#include "fedga/linalg.hpp"

using namespace fedga;

namespace {

std::shared_ptr<QuadraticOracle> noiseless(std::vector<Vector> betas) {
  const auto d = betas.front().size();
  return std::make_shared<QuadraticOracle>(Matrix::Identity(d, d), std::move(betas), Matrix::Zero(d, d));
}

std::shared_ptr<FRandEffOracle> frandeff(int k, double gamma, std::uint64_t seed = 3) {
  FRandEffSpec spec;
  spec.clients = k;
  spec.gamma = gamma;
  spec.seed = seed;
  return make_frandeff(spec);
}

RunConfig config_for(std::shared_ptr<const ModelOracle> oracle, ConnectionMatrix c, int n, int tau,
                     std::uint64_t seed) {
  RunConfig cfg;
  cfg.oracle = std::move(oracle);
  cfg.connection = std::move(c);
  cfg.n = n;
  cfg.tau = tau;
  cfg.schedule = {0.3, 0.0, 0.75};
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("step schedule") {
  const StepSchedule s{0.5, 2.0, 0.6};
  CHECK(s(1) == doctest::Approx(0.5 * std::pow(3.0, -0.6)));
  for (int t = 1; t < 200; ++t) CHECK(s(t + 1) < s(t));
  CHECK_THROWS_AS((StepSchedule{0.0, 0.0, 0.75}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((StepSchedule{1.0, -1.0, 0.75}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((StepSchedule{1.0, 0.0, 0.5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((StepSchedule{1.0, 0.0, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("single client reduces to textbook SGD") {
  const auto oracle = frandeff(1, 1.0);
  const auto traj = run_local_sgd(config_for(oracle, ConnectionMatrix(), 300, 1, 42));

  Rng rng(client_stream_seed(42, 0));
  const auto& pop = oracle->population();
  const double sigma = std::sqrt(pop.sigmas2[0]);
  Vector theta = Vector::Zero(2);
  Vector x(2);
  double worst = 0.0;
  for (int t = 1; t <= 300; ++t) {
    rng.fill_normal(x);
    const double y = x.dot(pop.betas[0]) + sigma * rng.normal();
    theta -= 0.3 * std::pow(t, -0.75) * x * (x.dot(theta) - y);
    worst = std::max(worst, (traj.ys.col(t - 1) - theta).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("noise-free single client follows the gradient-descent closed form") {
  auto oracle = noiseless({(Vector(2) << 1.0, -2.0).finished()});
  auto cfg = config_for(oracle, ConnectionMatrix(), 100, 1, 1);
  const auto traj = run_local_sgd(cfg);
  double factor = 1.0;
  for (int t = 1; t <= 100; ++t) {
    factor *= 1.0 - cfg.schedule(t);
    const Vector expected = oracle->theta_star() * (1.0 - factor);
    CHECK((traj.ys.col(t - 1) - expected).norm() < 1e-12);
  }
}

TEST_CASE("without synchronization each client converges to its own optimum") {
  std::vector<Vector> betas;
  for (int k = 0; k < 4; ++k) betas.push_back((Vector(2) << k, 1.0 - k).finished());
  auto oracle = noiseless(betas);
  auto cfg = config_for(oracle, uniform_connection(4), 400, 1000, 1);
  cfg.schedule = {0.9, 0.0, 0.6};
  cfg.record_clients = true;
  const auto traj = run_local_sgd(cfg);
  double factor = 1.0;
  for (int t = 1; t <= 400; ++t) factor *= 1.0 - cfg.schedule(t);
  for (int k = 0; k < 4; ++k) CHECK((traj.thetas.back().col(k) - betas[k] * (1.0 - factor)).norm() < 1e-12);
  CHECK((traj.ys.col(399) - oracle->theta_star()).norm() < 1e-5);
}

TEST_CASE("sync every step with complete averaging equals centralized SGD") {
  const auto oracle = frandeff(5, 1.0);
  const auto traj = run_local_sgd(config_for(oracle, uniform_connection(5), 200, 1, 9));

  std::vector<Rng> streams;
  for (int k = 0; k < 5; ++k) streams.emplace_back(client_stream_seed(9, k));
  Vector theta = Vector::Zero(2);
  Vector draw(3), g(2), acc(2);
  for (int t = 1; t <= 200; ++t) {
    acc.setZero();
    for (int k = 0; k < 5; ++k) {
      oracle->draw(k, streams[k], draw);
      oracle->gradient(k, draw, theta, nullptr, g);
      acc += oracle->weights()[k] * g;
    }
    theta -= 0.3 * std::pow(t, -0.75) * acc;
    CHECK((traj.ys.col(t - 1) - theta).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("trajectory invariants") {
  const auto oracle = frandeff(6, 1.0);
  auto cfg = config_for(oracle, banded_connection(6, 1), 120, 7, 5);
  cfg.record_clients = true;
  const auto traj = run_local_sgd(cfg);
  REQUIRE(traj.steps() == 120);
  Vector running = Vector::Zero(2);
  for (int t = 1; t <= 120; ++t) {
    running += traj.ys.col(t - 1);
    CHECK((traj.ybars.col(t - 1) - running / t).norm() < 1e-10);
    CHECK((traj.ys.col(t - 1) - traj.thetas[t - 1].rowwise().mean()).norm() < 1e-12);
    CHECK((polyak_ruppert(traj, t) - traj.ybars.col(t - 1)).norm() == 0.0);
  }
  CHECK_THROWS_AS(polyak_ruppert(traj, 0), std::out_of_range);
  CHECK_THROWS_AS(polyak_ruppert(traj, 121), std::out_of_range);

  const auto again = run_local_sgd(cfg);
  CHECK((again.ys - traj.ys).norm() == 0.0);
}

TEST_CASE("Polyak-Ruppert averages of hand-made sequences") {
  Trajectory traj;
  const Vector v = (Vector(2) << 1.5, -0.5).finished();
  traj.ys.resize(2, 2);
  traj.ys.col(0) = v;
  traj.ys.col(1) = 3 * v;
  traj.ybars.resize(2, 2);
  traj.ybars.col(0) = v;
  traj.ybars.col(1) = 2 * v;
  CHECK((polyak_ruppert(traj, 2) - 2 * v).norm() == 0.0);
}

TEST_CASE("clients evolve independently between synchronizations") {
  const auto oracle = frandeff(5, 1.0);
  auto cfg = config_for(oracle, banded_connection(5, 1), 30, 10, 8);
  cfg.record_clients = true;
  for (int k = 0; k < 5; ++k) cfg.client_seeds.push_back(client_stream_seed(8, k));
  const auto base = run_local_sgd(cfg);
  cfg.client_seeds[2] = 12345;
  const auto perturbed = run_local_sgd(cfg);
  for (int t = 1; t < 10; ++t)
    for (int k = 0; k < 5; ++k) {
      const double gap = (base.thetas[t - 1].col(k) - perturbed.thetas[t - 1].col(k)).norm();
      if (k == 2)
        CHECK(gap > 0.0);
      else
        CHECK(gap == 0.0);
    }
  CHECK((base.thetas[9].col(1) - perturbed.thetas[9].col(1)).norm() > 0.0);
  CHECK((base.thetas[9].col(4) - perturbed.thetas[9].col(4)).norm() == 0.0);
}

TEST_CASE("attacks") {
  const auto oracle = frandeff(4, 1.0);
  const auto cfg = config_for(oracle, banded_connection(4, 1), 80, 4, 2);
  const auto clean = run_local_sgd(cfg);

  SUBCASE("onset after the horizon changes nothing") {
    const auto late = run_local_sgd(cfg, mean_shift_attack(81, {0, 1}, 2, 3.0));
    CHECK((late.ys - clean.ys).norm() == 0.0);
  }
  SUBCASE("the attack leaves earlier steps untouched and shifts later ones") {
    const auto hit = run_local_sgd(cfg, mean_shift_attack(40, {0, 1}, 2, 3.0));
    CHECK((hit.ys.leftCols(39) - clean.ys.leftCols(39)).norm() == 0.0);
    CHECK((hit.ys.col(79) - clean.ys.col(79)).sum() > 0.5);
  }
  SUBCASE("invalid specifications") {
    CHECK_THROWS_AS(run_local_sgd(cfg, mean_shift_attack(0, {0}, 2, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(run_local_sgd(cfg, mean_shift_attack(5, {}, 2, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(run_local_sgd(cfg, mean_shift_attack(5, {4}, 2, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(run_local_sgd(cfg, AttackSpec{5, {0}, LabelFlip{}}), std::invalid_argument);
  }
}

TEST_CASE("configuration errors") {
  const auto oracle = frandeff(4, 1.0);
  CHECK_THROWS_AS(run_local_sgd(config_for(oracle, banded_connection(5, 1), 10, 1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(run_local_sgd(config_for(oracle, banded_connection(4, 1), 0, 1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(run_local_sgd(config_for(oracle, banded_connection(4, 1), 10, 0, 1)), std::invalid_argument);
  auto cfg = config_for(oracle, banded_connection(4, 1), 10, 1, 1);
  cfg.theta0 = Matrix::Zero(2, 3);
  CHECK_THROWS_AS(run_local_sgd(cfg), std::invalid_argument);
  cfg.theta0.resize(0, 0);
  cfg.oracle.reset();
  CHECK_THROWS_AS(run_local_sgd(cfg), std::invalid_argument);
}

TEST_CASE("observer can stop a run early") {
  const auto oracle = frandeff(3, 1.0);
  int calls = 0;
  const auto traj = run_local_sgd(config_for(oracle, banded_connection(3, 1), 50, 2, 4), std::nullopt,
                                  [&](int t, const Vector&, const Vector&) {
                                    ++calls;
                                    return t < 17;
                                  });
  CHECK(calls == 17);
  CHECK(traj.steps() == 17);
}

TEST_CASE("multiplier bootstrap") {
  const auto oracle = frandeff(10, 1.0);
  auto cfg = config_for(oracle, banded_connection(10, 1), 500, 5, 21);
  cfg.theta0 = initial_iterates(*oracle, InitMode::kThetaStar);

  SUBCASE("unit multipliers reproduce the base endpoint") {
    const auto res = run_multiplier_bootstrap(cfg, 5, MultiplierLaw::constant());
    for (int b = 0; b < 5; ++b) CHECK((res.endpoints.col(b) - res.base_ybar).norm() == 0.0);
  }
  SUBCASE("endpoint spread is of the order of the CLT covariance") {
    const auto law = MultiplierLaw::uniform(0.5);
    const auto res = run_multiplier_bootstrap(cfg, 200, law);
    const Matrix cov = bootstrap_covariance(res, 500, law);
    const Matrix target =
        sigma_asymptotic(oracle->hessian(), oracle->noise_covariance(NoiseMode::kAnalytic), 10) / 10.0;
    const double ratio = cov.norm() / target.norm();
    CHECK(ratio > 0.5);
    CHECK(ratio < 2.0);

    const Matrix c = res.endpoints.colwise() - res.endpoints.rowwise().mean();
    const Vector a = c.row(0).head(100).transpose();
    const Vector b = c.row(0).tail(100).transpose();
    const double corr = a.dot(b) / (a.norm() * b.norm());
    CHECK(std::abs(corr) < 0.3);
  }
  SUBCASE("worker count does not change the result") {
    const auto law = MultiplierLaw::two_point(0.5, 2.0);
    const auto one = run_multiplier_bootstrap(cfg, 12, law, 1);
    const auto many = run_multiplier_bootstrap(cfg, 12, law, 4);
    CHECK((one.endpoints - many.endpoints).norm() == 0.0);
  }
  SUBCASE("multiplier laws") {
    CHECK_THROWS_AS(run_multiplier_bootstrap(cfg, 2, MultiplierLaw{MultiplierLaw::Kind::kUniform, 0.0, 2.0}),
                    std::invalid_argument);
    CHECK(MultiplierLaw::uniform(0.5).variance() == doctest::Approx(1.0 / 12.0));
    const auto tp = MultiplierLaw::two_point(0.5, 2.0);
    Rng rng(3);
    double mean = 0.0, sq = 0.0;
    const int m = 200000;
    for (int i = 0; i < m; ++i) {
      const double w = tp.sample(rng);
      mean += w / m;
      sq += w * w / m;
    }
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
    CHECK(sq - mean * mean == doctest::Approx(tp.variance()).epsilon(0.02));
  }
}

TEST_CASE("moment scaling") {
  SUBCASE("complete averaging every step removes client dispersion") {
    const auto oracle = frandeff(4, 2.0);
    const auto rep = moment_scaling_report(config_for(oracle, uniform_connection(4), 60, 1, 3), 5, {1, 10, 60});
    for (double v : rep.dispersion) CHECK(v < 1e-24);
  }
  SUBCASE("dispersion tracks eta_t^2 K and the error decays like eta_t") {
    const auto oracle = frandeff(10, 1.0);
    auto cfg = config_for(oracle, banded_connection(10, 1), 500, 5, 6);
    cfg.theta0 = initial_iterates(*oracle, InitMode::kThetaStar);
    const auto rep = moment_scaling_report(cfg, 500, {100, 200, 300, 500});
    std::vector<double> normalized;
    for (std::size_t i = 0; i < rep.steps.size(); ++i)
      normalized.push_back(rep.dispersion[i] / (rep.eta[i] * rep.eta[i] * 10));
    const auto [lo, hi] = std::minmax_element(normalized.begin(), normalized.end());
    CHECK(*hi / *lo < 1.5);
    CHECK(rep.mse_slope == doctest::Approx(-0.75).epsilon(0.2));
  }
}

TEST_CASE("trajectory CSV export") {
  const auto oracle = frandeff(3, 1.0);
  auto cfg = config_for(oracle, banded_connection(3, 1), 4, 2, 1);
  cfg.record_clients = true;
  const auto traj = run_local_sgd(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "fedga_engine_test";
  std::filesystem::create_directories(dir);
  write_trajectory_csv(traj, dir / "traj.csv");
  write_client_csv(traj, dir / "clients.csv");
  std::ifstream in(dir / "traj.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,Y_0,Y_1,Ybar_0,Ybar_1");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 4);
  std::ifstream cin(dir / "clients.csv");
  int client_rows = -1;
  for (std::string line; std::getline(cin, line);) ++client_rows;
  CHECK(client_rows == 12);
  std::filesystem::remove_all(dir);
}
