#include "fedga/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedga/linalg.hpp"
#include "fedga/parallel.hpp"

namespace fedga {

namespace {

constexpr std::uint64_t kProcessAggr = 1;
constexpr std::uint64_t kProcessClient = 2;
constexpr std::uint64_t kProcessFclt = 3;
constexpr std::uint64_t kSeedNoise = 11;
constexpr std::uint64_t kSeedResample = 12;

}  // namespace

std::shared_ptr<FRandEffOracle> make_frandeff(const FRandEffSpec& spec) {
  if (spec.beta0.size() != spec.dim) throw std::invalid_argument("FRand-eff: beta0 must have length d");
  return std::make_shared<FRandEffOracle>(
      sample_frandeff(spec.clients, spec.dim, spec.beta0, spec.gamma, spec.sigma_set, spec.seed));
}

ConnectionMatrix make_connection(const ConnectionSpec& spec, int clients) {
  if (spec.kind == "banded") {
    if (clients < 2 * spec.bandwidth + 1) return uniform_connection(clients);
    return banded_connection(clients, spec.bandwidth);
  }
  if (spec.kind == "rho") return rho_mix_connection(clients, spec.rho);
  if (spec.kind == "uniform") return uniform_connection(clients);
  if (spec.kind == "csv") {
    ConnectionMatrix c = load_connection_csv(spec.path);
    if (c.size() != clients)
      throw std::invalid_argument("connection CSV has " + std::to_string(c.size()) + " clients, expected " +
                                  std::to_string(clients));
    return c;
  }
  throw std::invalid_argument("unknown connection kind '" + spec.kind + "' (banded, rho, uniform, csv)");
}

InitMode parse_init(const std::string& text) {
  if (text == "zero") return InitMode::kZero;
  if (text == "theta_star") return InitMode::kThetaStar;
  throw std::invalid_argument("unknown init '" + text + "' (zero, theta_star)");
}

std::string to_string(InitMode mode) { return mode == InitMode::kZero ? "zero" : "theta_star"; }

Matrix initial_iterates(const ModelOracle& oracle, InitMode mode) {
  if (mode == InitMode::kZero) return Matrix::Zero(oracle.dim(), oracle.clients());
  return oracle.theta_star().replicate(1, oracle.clients());
}

Matrix model_noise_covariance(const ModelOracle& oracle, std::uint64_t seed, int n_mc) {
  try {
    return oracle.noise_covariance(NoiseMode::kAnalytic);
  } catch (const UnsupportedMode&) {
    return oracle.noise_covariance(NoiseMode::kMonteCarlo, n_mc, seed);
  }
}

std::vector<Matrix> model_client_covariances(const ModelOracle& oracle, std::uint64_t seed, int n_mc) {
  std::vector<Matrix> covs;
  for (int k = 0; k < oracle.clients(); ++k) {
    try {
      covs.push_back(oracle.client_noise_covariance(k, NoiseMode::kAnalytic, 0, 0));
    } catch (const UnsupportedMode&) {
      covs.push_back(oracle.client_noise_covariance(k, NoiseMode::kMonteCarlo, n_mc,
                                                    derive_seed(seed, {std::uint64_t(k)})));
    }
  }
  return covs;
}

RunConfig EndpointStudy::run_config(int rep) const {
  RunConfig cfg;
  cfg.n = n;
  cfg.tau = tau;
  cfg.connection = connection;
  cfg.schedule = schedule;
  cfg.oracle = oracle;
  cfg.seed = derive_seed(seed, {stream::kReplication, std::uint64_t(rep)});
  cfg.theta0 = initial_iterates(*oracle, init);
  return cfg;
}

Matrix endpoint_sample(const EndpointStudy& study) {
  if (study.reps < 1) throw std::invalid_argument("endpoint study: reps must be >= 1");
  const int d = study.oracle->dim();
  Matrix out(d, study.reps);
  const double root_n = std::sqrt(static_cast<double>(study.n));
  const Vector& theta_star = study.oracle->theta_star();
  parallel_for(static_cast<std::size_t>(study.reps), study.workers, [&](std::size_t r) {
    const Trajectory traj = run_local_sgd(study.run_config(static_cast<int>(r)));
    out.col(static_cast<Eigen::Index>(r)) = root_n * (traj.ybars.col(study.n - 1) - theta_star);
  });
  return out;
}

DistanceEstimate berry_esseen_distance(const EndpointStudy& study, Whitening whitening, double c,
                                       int se_resamples) {
  const Matrix endpoints = endpoint_sample(study);
  const ModelOracle& oracle = *study.oracle;
  const Matrix a = oracle.hessian();
  const Matrix v_k = model_noise_covariance(oracle, derive_seed(study.seed, {kSeedNoise}));
  Matrix scaling;
  if (whitening == Whitening::kSigmaN) {
    scaling = sigma_n(ContractionKernel(a, study.schedule, study.n), v_k);
  } else {
    scaling = sigma_asymptotic(a, v_k, oracle.clients()) / static_cast<double>(oracle.clients());
  }
  const EmpiricalSample norms = whiten(endpoints, scaling, "whitened endpoint norms");
  const Cdf reference = chi_cdf(oracle.dim());

  DistanceEstimate est;
  est.reps = study.reps;
  est.value = kolmogorov_vs_reference(norms, reference, c);
  if (se_resamples > 1) {
    Rng rng(derive_seed(study.seed, {kSeedResample}));
    const auto& values = norms.values();
    std::vector<double> boot(values.size());
    double sum = 0.0, sum2 = 0.0;
    for (int b = 0; b < se_resamples; ++b) {
      for (auto& v : boot) v = values[rng.index(values.size())];
      const double ks = kolmogorov_vs_reference(EmpiricalSample(boot), reference, c);
      sum += ks;
      sum2 += ks * ks;
    }
    const double mean = sum / se_resamples;
    est.se = std::sqrt(std::max(0.0, (sum2 - se_resamples * mean * mean) / (se_resamples - 1)));
  }
  return est;
}

FcltScale parse_fclt_scale(const std::string& text) {
  if (text == "sigma") return FcltScale::kSigma;
  if (text == "sigma_over_k") return FcltScale::kSigmaOverK;
  throw std::invalid_argument("unknown f-CLT scale '" + text + "' (sigma, sigma_over_k)");
}

std::string to_string(FcltScale scale) { return scale == FcltScale::kSigma ? "sigma" : "sigma_over_k"; }

PathStudyResult path_study(const PathStudy& study) {
  const EndpointStudy& base = study.base;
  const ModelOracle& oracle = *base.oracle;
  const int chains = base.reps;
  if (chains < 2) throw std::invalid_argument("path study: need at least two chains");
  const int k_clients = oracle.clients();
  const Matrix a = oracle.hessian();
  const Matrix v_k = model_noise_covariance(oracle, derive_seed(base.seed, {kSeedNoise}));
  const std::vector<Matrix> client_covs = model_client_covariances(oracle, derive_seed(base.seed, {kSeedNoise, 1}));
  const ContractionKernel kernel(a, base.schedule, base.n);
  Matrix sigma = sigma_asymptotic(a, v_k, k_clients);
  if (study.fclt_scale == FcltScale::kSigmaOverK) sigma /= static_cast<double>(k_clients);

  std::vector<double> u_base(chains), u_aggr(chains), u_client(chains), u_fclt(chains);
  const Vector& theta_star = oracle.theta_star();
  parallel_for(static_cast<std::size_t>(chains), base.workers, [&](std::size_t r) {
    const Trajectory traj = run_local_sgd(base.run_config(static_cast<int>(r)));
    u_base[r] = max_partial_sum(traj.ys, theta_star);
    Rng rng_aggr(derive_seed(base.seed, {stream::kGaussian, kProcessAggr, r}));
    u_aggr[r] = max_norm(simulate_aggr_ga(kernel, v_k, k_clients, rng_aggr).partial_sums);
    Rng rng_client(derive_seed(base.seed, {stream::kGaussian, kProcessClient, r}));
    u_client[r] = max_norm(
        simulate_client_ga(kernel, client_covs, oracle.weights(), base.connection, base.tau, rng_client).partial_sums);
    Rng rng_fclt(derive_seed(base.seed, {stream::kGaussian, kProcessFclt, r}));
    u_fclt[r] = max_norm(simulate_fclt(sigma, base.n, rng_fclt).partial_sums);
  });

  PathStudyResult res{EmpiricalSample(u_base, "local_sgd"), EmpiricalSample(u_fclt, "f_clt"),
                      EmpiricalSample(u_aggr, "aggr_ga"), EmpiricalSample(u_client, "client_ga"),
                      {}, {}, {}};
  res.q_fclt = quantile_discrepancy(res.u_base, res.u_fclt);
  res.q_aggr = quantile_discrepancy(res.u_base, res.u_aggr);
  res.q_client = quantile_discrepancy(res.u_base, res.u_client);
  return res;
}

RateFit sigma_n_rate(const Matrix& hessian, const Matrix& v_k, int clients, const StepSchedule& schedule,
                     const std::vector<int>& grid) {
  RateFit fit;
  fit.grid = grid;
  const Matrix sigma = sigma_asymptotic(hessian, v_k, clients);
  std::vector<double> xs;
  for (int n : grid) {
    const Matrix sn = sigma_n(ContractionKernel(hessian, schedule, n), v_k);
    fit.errors.push_back((clients * sn - sigma).norm());
    xs.push_back(n);
  }
  if (grid.size() >= 2) fit.slope = loglog_slope(xs, fit.errors);
  return fit;
}

std::vector<double> omega_log_ratios(const Matrix& hessian, const StepSchedule& schedule,
                                     const std::vector<int>& grid) {
  std::vector<double> ratios;
  for (int n : grid) {
    const ContractionKernel kernel(hessian, schedule, n);
    double best = 0.0;
    for (int t = 1; t <= n; ++t) best = std::max(best, kernel.omega(t));
    ratios.push_back(best / std::log(static_cast<double>(n)));
  }
  return ratios;
}

namespace {

// Second moments of the columns of `samples` about their mean.
Matrix sample_covariance(const Matrix& samples) {
  const Matrix centered = samples.colwise() - samples.rowwise().mean();
  return centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
}

}  // namespace

double aggr_covariance_mismatch(const ContractionKernel& kernel, const Matrix& v_k, int clients, int chains,
                                const std::vector<int>& steps, std::uint64_t seed, int workers) {
  const int d = kernel.dim();
  std::vector<Matrix> at_step(steps.size(), Matrix(d, chains));
  parallel_for(static_cast<std::size_t>(chains), workers, [&](std::size_t r) {
    Rng rng(derive_seed(seed, {stream::kGaussian, r}));
    const GaussianPath path = simulate_aggr_ga(kernel, v_k, clients, rng);
    for (std::size_t i = 0; i < steps.size(); ++i) at_step[i].col(r) = path.ys.col(steps[i] - 1);
  });
  const auto recursion = aggr_ga_covariance(kernel, v_k);
  double worst = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i)
    worst = std::max(worst, relative_frobenius(sample_covariance(at_step[i]), recursion[steps[i] - 1]));
  return worst;
}

double sgd_covariance_mismatch(const RunConfig& base, int chains, const std::vector<int>& steps,
                               std::uint64_t seed, int workers) {
  const ModelOracle& oracle = *base.oracle;
  const int d = oracle.dim();
  std::vector<Matrix> at_step(steps.size(), Matrix(d, chains));
  parallel_for(static_cast<std::size_t>(chains), workers, [&](std::size_t r) {
    RunConfig cfg = base;
    cfg.seed = derive_seed(seed, {stream::kReplication, r});
    cfg.client_seeds.clear();
    cfg.theta0 = initial_iterates(oracle, InitMode::kThetaStar);
    const Trajectory traj = run_local_sgd(cfg);
    for (std::size_t i = 0; i < steps.size(); ++i) at_step[i].col(r) = traj.ys.col(steps[i] - 1);
  });
  const ContractionKernel kernel(oracle.hessian(), base.schedule, base.n);
  const auto recursion = aggr_ga_covariance(kernel, model_noise_covariance(oracle, seed));
  double worst = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i)
    worst = std::max(worst, relative_frobenius(sample_covariance(at_step[i]), recursion[steps[i] - 1]));
  return worst;
}

std::vector<CheckResult> theory_checks(const TheoryCheckConfig& cfg) {
  cfg.schedule.validate();
  if (cfg.n_max < 1) throw std::invalid_argument("theory checks: n_max must be >= 1");
  const auto oracle = make_frandeff(cfg.model);
  const Matrix a = oracle->hessian();
  const Matrix v_k = oracle->noise_covariance(NoiseMode::kAnalytic);
  const int k_clients = oracle->clients();
  std::vector<CheckResult> out;

  std::vector<int> rate_grid;
  for (int div : {16, 8, 4, 2, 1})
    if (cfg.n_max / div >= 100) rate_grid.push_back(cfg.n_max / div);

  {
    CheckResult c{"sigma_n_rate", "insufficient_range", 0.0, cfg.schedule.beta - 1.0, ""};
    if (rate_grid.size() >= 3) {
      const RateFit fit = sigma_n_rate(a, v_k, k_clients, cfg.schedule, rate_grid);
      c.value = fit.slope;
      c.status = std::abs(fit.slope - c.target) <= 0.15 ? "pass" : "fail";
      c.detail = "slope of log |K Sigma_n - Sigma|_F on log n, tolerance 0.15";
    } else {
      c.detail = "needs at least three horizons >= 100";
    }
    out.push_back(c);
  }
  {
    std::vector<int> grid(rate_grid.begin(), rate_grid.end() - (rate_grid.empty() ? 0 : 1));
    CheckResult c{"omega_log_growth", "insufficient_range", 0.0, 1.5, ""};
    if (grid.size() >= 3) {
      const auto ratios = omega_log_ratios(a, cfg.schedule, grid);
      const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
      c.value = *hi / *lo;
      c.status = c.value < c.target ? "pass" : "fail";
      c.detail = "max/min over n of max_t Omega_t / log n";
    } else {
      c.detail = "needs at least three horizons >= 100";
    }
    out.push_back(c);
  }
  {
    const int n = std::min(cfg.n_max, 500);
    std::vector<int> steps;
    for (int t : {10, 100, 500})
      if (t <= n) steps.push_back(t);
    CheckResult c{"aggr_covariance_recursion", "insufficient_range", 0.0, 0.05, ""};
    if (!steps.empty() && cfg.chains >= 100) {
      const ContractionKernel kernel(a, cfg.schedule, n);
      c.value = aggr_covariance_mismatch(kernel, v_k, k_clients, cfg.chains, steps, cfg.seed, cfg.workers);
      c.status = c.value <= c.target ? "pass" : "fail";
      c.detail = "relative Frobenius error of the Monte-Carlo covariance";
    } else {
      c.detail = "needs n >= 10 and at least 100 chains";
    }
    out.push_back(c);
  }
  {
    const int n = std::min(cfg.n_max, 50);
    const ContractionKernel kernel(a, cfg.schedule, n);
    const auto q = kernel.q_matrices();
    double worst = 0.0;
    for (int s = 1; s <= n; ++s) {
      Matrix naive = Matrix::Zero(a.rows(), a.cols());
      for (int j = s; j <= n; ++j) naive += kernel.contraction_product(s, j);
      naive *= kernel.eta(s);
      worst = std::max(worst, (naive - q[s]).norm());
    }
    out.push_back({"q_backward_recurrence", worst <= 1e-10 ? "pass" : "fail", worst, 1e-10,
                   "max_s |Q_s - naive double sum|_F"});
  }
  return out;
}

}  // namespace fedga
