#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedga/detect.hpp"
#include "fedga/engine.hpp"
#include "fedga/gauss.hpp"
#include "fedga/graph.hpp"
#include "fedga/models.hpp"
#include "fedga/stats.hpp"

namespace fedga {

struct FRandEffSpec {
  int clients = 10;
  int dim = 2;
  Vector beta0 = (Vector(2) << 2.0, -3.0).finished();
  double gamma = 1.0;
  std::vector<double> sigma_set{1, 2, 3, 4, 5};
  std::uint64_t seed = 0;
};

std::shared_ptr<FRandEffOracle> make_frandeff(const FRandEffSpec& spec);

struct ConnectionSpec {
  std::string kind = "banded";  // banded | rho | uniform | csv
  int bandwidth = 1;
  double rho = 0.0;
  std::string path;
};

/// Builds C for K clients. A banded request that does not fit (K < 2 bw + 1)
/// falls back to the uniform matrix.
ConnectionMatrix make_connection(const ConnectionSpec& spec, int clients);

enum class InitMode { kZero, kThetaStar };
InitMode parse_init(const std::string& text);
std::string to_string(InitMode mode);
/// d x K initial iterates for the given mode.
Matrix initial_iterates(const ModelOracle& oracle, InitMode mode);

/// Analytic V_K when the model has one, otherwise a Monte-Carlo estimate.
Matrix model_noise_covariance(const ModelOracle& oracle, std::uint64_t seed, int n_mc = 200000);
std::vector<Matrix> model_client_covariances(const ModelOracle& oracle, std::uint64_t seed, int n_mc = 200000);

/// Independent replications of one local SGD configuration.
struct EndpointStudy {
  std::shared_ptr<const ModelOracle> oracle;
  ConnectionMatrix connection;
  StepSchedule schedule;
  int n = 100;
  int tau = 1;
  int reps = 1000;
  std::uint64_t seed = 0;
  int workers = 1;
  InitMode init = InitMode::kZero;

  RunConfig run_config(int rep) const;
};

/// Columns are sqrt(n) (Ybar_n - theta*) for each replication.
Matrix endpoint_sample(const EndpointStudy& study);

enum class Whitening { kSigmaN, kSigmaAsymptotic };

struct DistanceEstimate {
  double value = 0.0;
  double se = 0.0;  // bootstrap standard error over replications
  int reps = 0;
};

/// d~_c (whitening by Sigma_n) or d_c-dagger (whitening by K^{-1} Sigma) of
/// the endpoint sample against the chi reference on [0, c].
DistanceEstimate berry_esseen_distance(const EndpointStudy& study, Whitening whitening, double c = 100.0,
                                       int se_resamples = 200);

enum class FcltScale { kSigma, kSigmaOverK };
FcltScale parse_fclt_scale(const std::string& text);
std::string to_string(FcltScale scale);

struct PathStudy {
  EndpointStudy base;  // reps is the number of chains per process
  FcltScale fclt_scale = FcltScale::kSigma;
};

struct PathStudyResult {
  EmpiricalSample u_base;
  EmpiricalSample u_fclt;
  EmpiricalSample u_aggr;
  EmpiricalSample u_client;
  QuantileReport q_fclt;
  QuantileReport q_aggr;
  QuantileReport q_client;
};

/// Maximum partial sums U_n of local SGD against the Aggr-GA, Client-GA and
/// f-CLT processes.
PathStudyResult path_study(const PathStudy& study);

struct CheckResult {
  std::string name;
  std::string status;  // pass | fail | insufficient_range
  double value = 0.0;
  double target = 0.0;
  std::string detail;
};

/// |K Sigma_n - Sigma|_F on each n in `grid` and the fitted log-log slope.
struct RateFit {
  std::vector<int> grid;
  std::vector<double> errors;
  double slope = 0.0;
};
RateFit sigma_n_rate(const Matrix& hessian, const Matrix& v_k, int clients, const StepSchedule& schedule,
                     const std::vector<int>& grid);

/// max_{t<=n} Omega_t / log n on each n in `grid`.
std::vector<double> omega_log_ratios(const Matrix& hessian, const StepSchedule& schedule,
                                     const std::vector<int>& grid);

/// Largest relative Frobenius error between the Monte-Carlo covariance of
/// `chains` Aggr-GA chains and the deterministic recursion, over `steps`.
double aggr_covariance_mismatch(const ContractionKernel& kernel, const Matrix& v_k, int clients, int chains,
                                const std::vector<int>& steps, std::uint64_t seed, int workers = 1);

/// Largest relative Frobenius error between Cov(Y_t) over `chains` local
/// SGD runs and the Aggr-GA recursion, over `steps`. Runs start at theta*.
double sgd_covariance_mismatch(const RunConfig& base, int chains, const std::vector<int>& steps,
                               std::uint64_t seed, int workers = 1);

struct TheoryCheckConfig {
  FRandEffSpec model;
  StepSchedule schedule;
  int n_max = 1600;
  int chains = 10000;
  std::uint64_t seed = 0;
  int workers = 1;
};

std::vector<CheckResult> theory_checks(const TheoryCheckConfig& cfg);

}  // namespace fedga
