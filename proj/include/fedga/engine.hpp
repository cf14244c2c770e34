#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "fedga/graph.hpp"
#include "fedga/models.hpp"
#include "fedga/types.hpp"

namespace fedga {

/// eta_t = eta0 * (t + k0)^(-beta).
struct StepSchedule {
  double eta0 = 0.3;
  double k0 = 0.0;
  double beta = 0.75;

  double operator()(int t) const;
  /// Throws unless eta0 > 0, k0 >= 0 and beta in (1/2, 1).
  void validate() const;
};

struct AttackSpec {
  int t0 = 1;               // first attacked step
  std::vector<int> poisoned;  // client indices
  AttackKind kind;
};

/// Mean-shift attack applying the scalar mu to every coordinate.
AttackSpec mean_shift_attack(int t0, std::vector<int> poisoned, int dim, double mu);

struct RunConfig {
  int n = 1;
  int tau = 1;
  ConnectionMatrix connection;
  StepSchedule schedule;
  std::shared_ptr<const ModelOracle> oracle;
  std::uint64_t seed = 0;
  bool record_clients = false;
  bool record_draws = false;
  /// d x K initial iterates; zero when empty.
  Matrix theta0;
  /// Explicit per-client stream seeds; derived from `seed` when empty.
  std::vector<std::uint64_t> client_seeds;

  void validate() const;
  std::uint64_t client_seed(int client) const;
};

/// Seed of client k's data stream for a run seeded with `seed`.
std::uint64_t client_stream_seed(std::uint64_t seed, int client);

struct Trajectory {
  Matrix ys;                    // d x n; column t-1 holds Y_t
  Matrix ybars;                 // d x n; column t-1 holds the running mean of Y_1..Y_t
  std::vector<Matrix> thetas;   // optional d x K per step (Theta_t)
  std::vector<Matrix> draws;    // optional draw_size x K per step (xi_t)
  Matrix theta0;                // d x K
  Vector theta_star;

  int steps() const { return static_cast<int>(ys.cols()); }
  int dim() const { return static_cast<int>(ys.rows()); }
};

/// Called after every step with (t, Y_t, Ybar_t); return false to stop the run.
using StepObserver = std::function<bool(int, const Vector&, const Vector&)>;

/// Local SGD: Theta_t = (Theta_{t-1} - eta_t G_t) C_t with
/// G_t = K (w_1 grad f_1, ..., w_K grad f_K) and C_t = C on multiples of
/// tau, I otherwise. Y_t is the client average.
Trajectory run_local_sgd(const RunConfig& config, const std::optional<AttackSpec>& attack = std::nullopt,
                         const StepObserver& observer = {});

/// Polyak-Ruppert average at step t (1-based).
Vector polyak_ruppert(const Trajectory& traj, int t);

/// Law of the bootstrap multipliers; always mean 1 with support in [lo, hi].
struct MultiplierLaw {
  enum class Kind { kConstant, kUniform, kTwoPoint };
  Kind kind = Kind::kConstant;
  double lo = 1.0;
  double hi = 1.0;

  static MultiplierLaw constant();
  /// Uniform on [1 - half_width, 1 + half_width].
  static MultiplierLaw uniform(double half_width);
  /// Two-point law on {lo, hi} weighted to have mean 1.
  static MultiplierLaw two_point(double lo, double hi);

  double variance() const;
  double sample(Rng& rng) const;
  void validate() const;
};

struct BootstrapResult {
  Vector base_ybar;   // Ybar_n of the data run
  Matrix endpoints;   // d x B, column b holds Ybar_n^{(b)}
};

/// Weighted multiplier bootstrap: every chain replays the base run's data
/// draws xi_t^k and scales each client gradient by an independent W_{t,k}^{(b)}.
BootstrapResult run_multiplier_bootstrap(const RunConfig& config, int replicates, const MultiplierLaw& law,
                                         int workers = 1);

/// n * Cov(Ybar^{(b)} - Ybar_n) / Var(W); comparable with K^{-1} Sigma.
Matrix bootstrap_covariance(const BootstrapResult& result, int n, const MultiplierLaw& law);

struct MomentReport {
  std::vector<int> steps;
  std::vector<double> dispersion;  // E |Theta_t (I - J)|_F^2
  std::vector<double> mse;         // E |Y_t - theta*|^2
  std::vector<double> fourth;      // E |Y_t - theta*|^4
  std::vector<double> eta;         // eta_t
  double dispersion_slope = 0.0;   // log-log slopes vs t
  double mse_slope = 0.0;
  double fourth_slope = 0.0;
};

/// |Theta (I - J)|_F^2 computed from pairwise column differences, so it is
/// exactly zero when all columns coincide.
double client_dispersion(const Matrix& theta);

/// Monte-Carlo moments of the client dispersion and aggregate error on a
/// log-spaced grid of steps (or `grid` when given).
MomentReport moment_scaling_report(const RunConfig& config, int reps, std::vector<int> grid = {},
                                   int workers = 1);

/// Least-squares slope of log(y) on log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// CSV with columns t, Y_t[0..d), Ybar_t[0..d).
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);
/// CSV with columns t, k, theta[0..d); requires recorded client iterates.
void write_client_csv(const Trajectory& traj, const std::filesystem::path& path);

}  // namespace fedga
