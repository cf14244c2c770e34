#include "fedga/engine.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "fedga/parallel.hpp"

namespace fedga {

double StepSchedule::operator()(int t) const { return eta0 * std::pow(t + k0, -beta); }

void StepSchedule::validate() const {
  if (!(eta0 > 0.0)) throw std::invalid_argument("step schedule: eta0 must be positive");
  if (!(k0 >= 0.0)) throw std::invalid_argument("step schedule: k0 must be nonnegative");
  if (!(beta > 0.5 && beta < 1.0))
    throw std::invalid_argument("step schedule: beta must lie in (1/2, 1), got " + std::to_string(beta));
}

AttackSpec mean_shift_attack(int t0, std::vector<int> poisoned, int dim, double mu) {
  return AttackSpec{t0, std::move(poisoned), MeanShift{Vector::Constant(dim, mu)}};
}

std::uint64_t client_stream_seed(std::uint64_t seed, int client) {
  return derive_seed(seed, {stream::kClient, static_cast<std::uint64_t>(client)});
}

std::uint64_t RunConfig::client_seed(int client) const {
  if (!client_seeds.empty()) return client_seeds.at(client);
  return client_stream_seed(seed, client);
}

void RunConfig::validate() const {
  if (!oracle) throw std::invalid_argument("run config: no model oracle");
  if (n < 1) throw std::invalid_argument("run config: n must be >= 1");
  if (tau < 1) throw std::invalid_argument("run config: tau must be >= 1");
  schedule.validate();
  if (connection.size() != oracle->clients())
    throw std::invalid_argument("run config: connection matrix has K=" + std::to_string(connection.size()) +
                                " but the model has K=" + std::to_string(oracle->clients()));
  if (theta0.size() != 0 && (theta0.rows() != oracle->dim() || theta0.cols() != oracle->clients()))
    throw std::invalid_argument("run config: theta0 must be d x K");
  if (!client_seeds.empty() && static_cast<int>(client_seeds.size()) != oracle->clients())
    throw std::invalid_argument("run config: client_seeds must have K entries");
}

namespace {

void validate_attack(const AttackSpec& attack, const ModelOracle& oracle) {
  if (attack.t0 < 1) throw std::invalid_argument("attack onset t0 must be >= 1");
  if (attack.poisoned.empty()) throw std::invalid_argument("attack needs at least one poisoned client");
  for (int k : attack.poisoned)
    if (k < 0 || k >= oracle.clients())
      throw std::invalid_argument("poisoned client index " + std::to_string(k) + " out of range");
  if (!oracle.supports(attack.kind))
    throw std::invalid_argument("model '" + oracle.name() + "' does not support this attack kind");
}

/// Shared recursion. `fill_draws(t, draws)` supplies xi_t for all clients and
/// `scale(t, k)` an extra factor on client k's gradient (1 for plain runs).
template <class DrawFn, class ScaleFn>
Trajectory local_sgd_core(const RunConfig& cfg, const std::optional<AttackSpec>& attack, DrawFn&& fill_draws,
                          ScaleFn&& scale, const StepObserver& observer) {
  cfg.validate();
  const ModelOracle& oracle = *cfg.oracle;
  const int d = oracle.dim();
  const int k_clients = oracle.clients();
  std::vector<char> poisoned(k_clients, 0);
  if (attack) {
    validate_attack(*attack, oracle);
    for (int k : attack->poisoned) poisoned[k] = 1;
  }
  const AttackKind* attack_kind = attack ? &attack->kind : nullptr;

  Trajectory traj;
  traj.theta_star = oracle.theta_star();
  traj.theta0 = cfg.theta0.size() ? cfg.theta0 : Matrix::Zero(d, k_clients);
  traj.ys.resize(d, cfg.n);
  traj.ybars.resize(d, cfg.n);

  Matrix theta = traj.theta0;
  Matrix grads(d, k_clients);
  Matrix draws(oracle.draw_size(), k_clients);
  Matrix mixed(d, k_clients);
  Vector grad(d);
  Vector y(d);
  Vector ybar = Vector::Zero(d);
  const Matrix& c = cfg.connection.entries();
  const Vector& w = oracle.weights();

  int t = 1;
  for (; t <= cfg.n; ++t) {
    fill_draws(t, draws);
    const double eta = cfg.schedule(t);
    const bool attacked_step = attack && t >= attack->t0;
    for (int k = 0; k < k_clients; ++k) {
      const AttackKind* a = attacked_step && poisoned[k] ? attack_kind : nullptr;
      oracle.gradient(k, draws.col(k), theta.col(k), a, grad);
      const double factor = k_clients * w[k] * scale(t, k);
      theta.col(k) -= eta * factor * grad;
    }
    if (t % cfg.tau == 0) {
      mixed.noalias() = theta * c;
      theta.swap(mixed);
    }
    y = theta.rowwise().sum() / static_cast<double>(k_clients);
    ybar += (y - ybar) / static_cast<double>(t);
    traj.ys.col(t - 1) = y;
    traj.ybars.col(t - 1) = ybar;
    if (cfg.record_clients) traj.thetas.push_back(theta);
    if (cfg.record_draws) traj.draws.push_back(draws);
    if (observer && !observer(t, y, ybar)) {
      ++t;
      break;
    }
  }
  const int done = t - 1;
  if (done < cfg.n) {
    traj.ys.conservativeResize(Eigen::NoChange, done);
    traj.ybars.conservativeResize(Eigen::NoChange, done);
  }
  return traj;
}

}  // namespace

Trajectory run_local_sgd(const RunConfig& config, const std::optional<AttackSpec>& attack,
                         const StepObserver& observer) {
  config.validate();
  std::vector<Rng> streams;
  streams.reserve(config.oracle->clients());
  for (int k = 0; k < config.oracle->clients(); ++k) streams.emplace_back(config.client_seed(k));
  const ModelOracle& oracle = *config.oracle;
  auto fill = [&](int, Matrix& draws) {
    for (int k = 0; k < oracle.clients(); ++k) oracle.draw(k, streams[k], draws.col(k));
  };
  return local_sgd_core(config, attack, fill, [](int, int) { return 1.0; }, observer);
}

Vector polyak_ruppert(const Trajectory& traj, int t) {
  if (t < 1 || t > traj.steps())
    throw std::out_of_range("polyak_ruppert: step " + std::to_string(t) + " outside [1, " +
                            std::to_string(traj.steps()) + "]");
  return traj.ybars.col(t - 1);
}

// ---------------------------------------------------------------------------
// Multiplier bootstrap

MultiplierLaw MultiplierLaw::constant() { return {}; }

MultiplierLaw MultiplierLaw::uniform(double half_width) {
  return {Kind::kUniform, 1.0 - half_width, 1.0 + half_width};
}

MultiplierLaw MultiplierLaw::two_point(double lo, double hi) { return {Kind::kTwoPoint, lo, hi}; }

void MultiplierLaw::validate() const {
  if (!(lo > 0.0)) throw std::invalid_argument("multiplier law must be bounded away from 0 (c1 > 0)");
  if (!(lo <= 1.0 && hi >= 1.0)) throw std::invalid_argument("multiplier support must contain the mean 1");
  if (kind == Kind::kTwoPoint && !(lo < hi)) throw std::invalid_argument("two-point law needs lo < hi");
}

double MultiplierLaw::variance() const {
  switch (kind) {
    case Kind::kConstant: return 0.0;
    case Kind::kUniform: return (hi - lo) * (hi - lo) / 12.0;
    case Kind::kTwoPoint: return (1.0 - lo) * (hi - 1.0);
  }
  return 0.0;
}

double MultiplierLaw::sample(Rng& rng) const {
  switch (kind) {
    case Kind::kConstant: return 1.0;
    case Kind::kUniform: return rng.uniform(lo, hi);
    case Kind::kTwoPoint: {
      const double p_lo = (hi - 1.0) / (hi - lo);
      return rng.uniform() < p_lo ? lo : hi;
    }
  }
  return 1.0;
}

BootstrapResult run_multiplier_bootstrap(const RunConfig& config, int replicates, const MultiplierLaw& law,
                                         int workers) {
  law.validate();
  if (replicates < 1) throw std::invalid_argument("bootstrap needs at least one replicate");
  RunConfig base_cfg = config;
  base_cfg.record_draws = true;
  base_cfg.record_clients = false;
  const Trajectory base = run_local_sgd(base_cfg);

  BootstrapResult result;
  result.base_ybar = base.ybars.col(base.steps() - 1);
  result.endpoints.resize(base.dim(), replicates);

  RunConfig chain_cfg = config;
  chain_cfg.record_draws = false;
  chain_cfg.record_clients = false;
  parallel_for(static_cast<std::size_t>(replicates), workers, [&](std::size_t b) {
    Rng mult(derive_seed(config.seed, {stream::kMultiplier, b}));
    const int k_clients = config.oracle->clients();
    std::vector<double> w_t(k_clients);
    int filled_for = 0;
    auto fill = [&](int t, Matrix& draws) { draws = base.draws[t - 1]; };
    auto scale = [&](int t, int k) {
      if (filled_for != t) {
        for (auto& x : w_t) x = law.sample(mult);
        filled_for = t;
      }
      return w_t[k];
    };
    const Trajectory chain = local_sgd_core(chain_cfg, std::nullopt, fill, scale, {});
    result.endpoints.col(static_cast<Eigen::Index>(b)) = chain.ybars.col(chain.steps() - 1);
  });
  return result;
}

Matrix bootstrap_covariance(const BootstrapResult& result, int n, const MultiplierLaw& law) {
  const double var = law.variance();
  if (!(var > 0.0)) throw std::invalid_argument("bootstrap covariance needs a non-degenerate multiplier law");
  const Matrix centered = result.endpoints.colwise() - result.base_ybar;
  return n * (centered * centered.transpose()) / (static_cast<double>(result.endpoints.cols()) * var);
}

// ---------------------------------------------------------------------------
// Moment scaling

double client_dispersion(const Matrix& theta) {
  const Eigen::Index k = theta.cols();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) acc += (theta.col(i) - theta.col(j)).squaredNorm();
  return acc / static_cast<double>(k);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope needs >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw std::invalid_argument("loglog_slope needs positive values");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = m * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("loglog_slope: degenerate x values");
  return (m * sxy - sx * sy) / denom;
}

MomentReport moment_scaling_report(const RunConfig& config, int reps, std::vector<int> grid, int workers) {
  config.validate();
  if (reps < 1) throw std::invalid_argument("moment report needs reps >= 1");
  if (grid.empty()) {
    const int points = 12;
    for (int i = 0; i < points; ++i) {
      const int t = static_cast<int>(std::lround(std::exp(std::log(config.n) * (i + 1) / points)));
      if (grid.empty() || t > grid.back()) grid.push_back(t);
    }
  }
  for (int t : grid)
    if (t < 1 || t > config.n) throw std::invalid_argument("moment grid step outside [1, n]");

  const std::size_t g = grid.size();
  std::vector<std::vector<double>> disp(reps, std::vector<double>(g)), err2(reps, std::vector<double>(g));
  RunConfig cfg = config;
  cfg.record_clients = true;
  parallel_for(static_cast<std::size_t>(reps), workers, [&](std::size_t r) {
    RunConfig local = cfg;
    local.seed = derive_seed(config.seed, {stream::kReplication, r});
    const Trajectory traj = run_local_sgd(local);
    for (std::size_t i = 0; i < g; ++i) {
      const int t = grid[i];
      disp[r][i] = client_dispersion(traj.thetas[t - 1]);
      err2[r][i] = (traj.ys.col(t - 1) - traj.theta_star).squaredNorm();
    }
  });

  MomentReport rep;
  rep.steps = grid;
  for (std::size_t i = 0; i < g; ++i) {
    double sd = 0, s2 = 0, s4 = 0;
    for (int r = 0; r < reps; ++r) {
      sd += disp[r][i];
      s2 += err2[r][i];
      s4 += err2[r][i] * err2[r][i];
    }
    rep.dispersion.push_back(sd / reps);
    rep.mse.push_back(s2 / reps);
    rep.fourth.push_back(s4 / reps);
    rep.eta.push_back(config.schedule(grid[i]));
  }
  std::vector<double> ts(grid.begin(), grid.end());
  auto positive = [](const std::vector<double>& v) {
    for (double x : v)
      if (!(x > 0)) return false;
    return true;
  };
  if (g >= 2) {
    if (positive(rep.dispersion)) rep.dispersion_slope = loglog_slope(ts, rep.dispersion);
    if (positive(rep.mse)) rep.mse_slope = loglog_slope(ts, rep.mse);
    if (positive(rep.fourth)) rep.fourth_slope = loglog_slope(ts, rep.fourth);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Export

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(6);
  out << "t";
  for (int j = 0; j < traj.dim(); ++j) out << ",Y_" << j;
  for (int j = 0; j < traj.dim(); ++j) out << ",Ybar_" << j;
  out << '\n';
  for (int t = 1; t <= traj.steps(); ++t) {
    out << t;
    for (int j = 0; j < traj.dim(); ++j) out << ',' << traj.ys(j, t - 1);
    for (int j = 0; j < traj.dim(); ++j) out << ',' << traj.ybars(j, t - 1);
    out << '\n';
  }
}

void write_client_csv(const Trajectory& traj, const std::filesystem::path& path) {
  if (traj.thetas.empty()) throw std::invalid_argument("trajectory has no per-client iterates recorded");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(6);
  out << "t,k";
  for (int j = 0; j < traj.dim(); ++j) out << ",theta_" << j;
  out << '\n';
  for (std::size_t t = 0; t < traj.thetas.size(); ++t)
    for (Eigen::Index k = 0; k < traj.thetas[t].cols(); ++k) {
      out << t + 1 << ',' << k;
      for (int j = 0; j < traj.dim(); ++j) out << ',' << traj.thetas[t](j, k);
      out << '\n';
    }
}

}  // namespace fedga
