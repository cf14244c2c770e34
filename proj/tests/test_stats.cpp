#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "fedga/gauss.hpp"
#include "fedga/linalg.hpp"
#include "fedga/stats.hpp"

using namespace fedga;

namespace {

std::vector<double> chi_draws(int d, int count, std::uint64_t seed) {
  Rng rng(seed);
  Vector z(d);
  std::vector<double> out(count);
  for (auto& v : out) {
    rng.fill_normal(z);
    v = z.norm();
  }
  return out;
}

CusumValue brute_cusum(const Matrix& ybars, int t) {
  CusumValue best{0.0, 1};
  for (int s = 1; s <= t; ++s) {
    const double v = s * (ybars.col(s - 1) - ybars.col(t - 1)).norm();
    if (v > best.r) best = {v, s};
  }
  return best;
}

}  // namespace

TEST_CASE("empirical sample basics") {
  const EmpiricalSample s({3.0, 1.0, 2.0, 4.0}, "x");
  CHECK(s.label() == "x");
  CHECK(s.sorted() == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(s.quantile(0.0) == 1.0);
  CHECK(s.quantile(1.0) == 4.0);
  CHECK(s.quantile(0.5) == doctest::Approx(2.5));
  CHECK(s.quantile(0.25) == doctest::Approx(1.75));
  CHECK(s.cdf(2.0) == doctest::Approx(0.5));
  CHECK(s.cdf(0.5) == 0.0);
  CHECK_THROWS(EmpiricalSample(std::vector<double>{}));
  CHECK_THROWS(EmpiricalSample({1.0, NAN}));
}

TEST_CASE("chi reference CDF") {
  const auto f2 = chi_cdf(2);
  for (double x : {0.0, 0.3, 1.0, 2.5})
    CHECK(f2(x) == doctest::Approx(1.0 - std::exp(-x * x / 2.0)).epsilon(1e-14));
  for (int d : {1, 3, 5}) {
    const auto f = chi_cdf(d);
    const boost::math::chi_squared_distribution<double> chi2(d);
    for (double x : {0.2, 1.0, 1.7, 3.0}) CHECK(f(x) == doctest::Approx(cdf(chi2, x * x)).epsilon(1e-12));
  }
}

TEST_CASE("Kolmogorov distance against a reference") {
  SUBCASE("a large sample from the reference is close") {
    const EmpiricalSample s(chi_draws(2, 100000, 1));
    CHECK(kolmogorov_vs_reference(s, chi_cdf(2), 100.0) <= 0.01);
  }
  SUBCASE("a single point sees both one-sided limits") {
    const EmpiricalSample s({1.0});
    const double f = chi_cdf(2)(1.0);
    CHECK(kolmogorov_vs_reference(s, chi_cdf(2), 100.0) == doctest::Approx(std::max(f, 1.0 - f)));
  }
  SUBCASE("permutation invariance and brute-force agreement") {
    auto values = chi_draws(2, 300, 2);
    const EmpiricalSample a(values);
    std::shuffle(values.begin(), values.end(), std::mt19937_64(5));
    const EmpiricalSample b(values);
    const auto ref = chi_cdf(2);
    const double da = kolmogorov_vs_reference(a, ref, 100.0);
    CHECK(da == kolmogorov_vs_reference(b, ref, 100.0));

    double brute = 0.0;
    const auto& sorted = a.sorted();
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const double f = ref(sorted[i]);
      brute = std::max({brute, std::abs(f - static_cast<double>(i) / sorted.size()),
                        std::abs(f - static_cast<double>(i + 1) / sorted.size())});
    }
    CHECK(std::abs(da - brute) <= 1.0 / sorted.size());
  }
  SUBCASE("a restricted window ignores points beyond c") {
    const EmpiricalSample s({0.1, 5.0, 6.0});
    const auto ref = [](double) { return 0.0; };
    CHECK(kolmogorov_vs_reference(s, ref, 1.0) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("c must be positive") {
    const EmpiricalSample s({1.0});
    CHECK_THROWS(kolmogorov_vs_reference(s, chi_cdf(2), 0.0));
    CHECK_THROWS(kolmogorov_vs_reference(s, chi_cdf(2), -1.0));
  }
}

TEST_CASE("whitening") {
  Matrix pts(2, 3);
  pts << 3.0, 0.0, 1.0, 4.0, 2.0, 0.0;
  const auto plain = whiten(pts, Matrix::Identity(2, 2));
  CHECK(plain.values() == std::vector<double>{5.0, 2.0, 1.0});
  const auto halved = whiten(pts, 4.0 * Matrix::Identity(2, 2));
  CHECK(halved.values()[0] == doctest::Approx(2.5));
  CHECK(halved.values()[1] == doctest::Approx(1.0));

  Matrix singular = Matrix::Zero(2, 2);
  singular(0, 0) = 1.0;
  CHECK_THROWS(whiten(pts, singular));

  SUBCASE("a correlated Gaussian sample whitens to the chi law") {
    Matrix cov(2, 2);
    cov << 2.0, 0.8, 0.8, 0.7;
    GaussianSampler sampler(cov);
    Rng rng(12);
    const int m = 2000;
    Matrix xs(2, m);
    Vector z(2);
    for (int i = 0; i < m; ++i) {
      sampler.sample(rng, z);
      xs.col(i) = z;
    }
    // 5% critical value of the one-sample Kolmogorov-Smirnov statistic.
    CHECK(kolmogorov_vs_reference(whiten(xs, cov), chi_cdf(2), 100.0) < 1.358 / std::sqrt(m));
  }
}

TEST_CASE("path maxima") {
  Matrix ys(1, 3);
  ys << 1.0, -2.0, 3.0;
  CHECK(max_partial_sum(ys, Vector::Zero(1)) == doctest::Approx(2.0));
  const Vector c = (Vector(2) << 1.0, -1.0).finished();
  CHECK(max_partial_sum(c.replicate(1, 7), c) == 0.0);

  Matrix sums(2, 2);
  sums << 3.0, 0.0, 4.0, 1.0;
  CHECK(max_norm(sums) == doctest::Approx(5.0));
}

TEST_CASE("quantile discrepancy") {
  const auto grid = default_alpha_grid();
  REQUIRE(grid.size() == 99);
  CHECK(grid.front() == doctest::Approx(0.01));
  CHECK(grid.back() == doctest::Approx(0.99));

  const auto base_values = chi_draws(2, 500, 3);
  const EmpiricalSample base(base_values);
  CHECK(quantile_discrepancy(base, base).discrepancy == 0.0);

  for (double eps : {-0.5, 0.3, 1.0}) {
    std::vector<double> scaled = base_values;
    for (auto& v : scaled) v *= 1.0 + eps;
    const auto rep = quantile_discrepancy(base, EmpiricalSample(scaled));
    CHECK(rep.discrepancy == doctest::Approx(std::abs(eps)).epsilon(1e-12));
  }

  const auto rep = quantile_discrepancy(base, EmpiricalSample(chi_draws(2, 500, 4)));
  for (std::size_t i = 1; i < rep.q_base.size(); ++i) CHECK(rep.q_base[i] <= rep.q_base[i - 1]);
  CHECK(std::find(rep.alphas.begin(), rep.alphas.end(), rep.argmax_alpha) != rep.alphas.end());

  const EmpiricalSample zeros({0.0, 0.0, 0.0, 1.0});
  try {
    quantile_discrepancy(zeros, zeros);
    FAIL("zero base quantile accepted");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("alpha") != std::string::npos);
  }
}

TEST_CASE("QQ export") {
  const auto dir = std::filesystem::temp_directory_path() / "fedga_stats_test";
  std::filesystem::create_directories(dir);
  const EmpiricalSample s(chi_draws(2, 50, 9));
  write_qq_csv(dir / "qq.csv", {0.1, 0.5}, s, s, s, s, {"seed=1"});
  std::ifstream in(dir / "qq.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "# seed=1");
  std::getline(in, line);
  CHECK(line == "alpha,q_base,q_fclt,q_aggr,q_client");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("CUSUM statistic") {
  SUBCASE("constant averages") {
    const Matrix flat = Matrix::Constant(2, 6, 1.5);
    const auto v = cusum(flat, 6);
    CHECK(v.r == 0.0);
    CHECK(v.s == 1);
  }
  SUBCASE("hand example") {
    Matrix y(1, 3);
    y << 0.0, 0.0, 1.0;
    const auto v = cusum(y, 3);
    CHECK(v.r == doctest::Approx(2.0));
    CHECK(v.s == 2);
  }
  SUBCASE("ties go to the earliest step") {
    Matrix y(1, 3);
    y << 1.0, 0.5, 0.0;
    const auto v = cusum(y, 3);
    CHECK(v.r == doctest::Approx(1.0));
    CHECK(v.s == 1);
  }
  SUBCASE("tracker matches brute force on random paths") {
    Rng rng(31);
    const int n = 200;
    Matrix ybars(2, n);
    Vector y(2), running = Vector::Zero(2);
    CusumTracker tracker(2, n);
    for (int t = 1; t <= n; ++t) {
      rng.fill_normal(y);
      running += (y - running) / t;
      ybars.col(t - 1) = running;
      tracker.push(running);
      const auto fast = tracker.current();
      const auto slow = brute_cusum(ybars, t);
      CHECK(fast.r == slow.r);
      CHECK(fast.s == slow.s);
      CHECK(fast.r >= 0.0);
      CHECK(cusum(ybars, t).r == slow.r);
    }
    CHECK(tracker.size() == n);
  }
  SUBCASE("out of range") {
    const Matrix y = Matrix::Zero(1, 3);
    CHECK_THROWS_AS(cusum(y, 4), std::out_of_range);
    CHECK_THROWS_AS(cusum(y, 0), std::out_of_range);
  }
}
