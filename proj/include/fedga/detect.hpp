#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedga/engine.hpp"
#include "fedga/gauss.hpp"
#include "fedga/random.hpp"
#include "fedga/stats.hpp"
#include "fedga/types.hpp"

namespace fedga {

enum class TestCadence { kEvery, kSync };

TestCadence parse_cadence(const std::string& text);
std::string to_string(TestCadence cadence);

struct DetectorConfig {
  double alpha = 0.05;
  int bootstrap = 500;     // B
  double c_thresh = 0.1;   // threshold offset is c_thresh * sqrt(n)
  Matrix hessian;          // A
  Matrix v_k;              // V_K
  StepSchedule schedule;
  int n = 0;
  int clients = 1;         // K
  TestCadence cadence = TestCadence::kSync;
  int tau = 1;

  void validate() const;
  bool tested(int t) const;
};

struct TraceEntry {
  int t = 0;
  double r = 0.0;        // R_t of the data
  int s = 0;             // argmax s_t
  double quantile = 0.0; // empirical (1 - alpha) quantile of the bootstrap R_t
  double threshold = 0.0;
};

struct DetectionReport {
  bool detected = false;   // stopped strictly before n
  int stopping_time = -1;  // T0_hat, -1 when the test never fired
  int attack_instance = -1;  // s_{T0_hat}, -1 when the test never fired
  int steps_observed = 0;
  std::vector<TraceEntry> trace;
};

nlohmann::json to_json(const DetectionReport& report);
void write_report_json(const DetectionReport& report, const std::filesystem::path& path);

/// Sequential CUSUM test against B Aggr-GA bootstrap chains that advance in
/// lockstep with the observed running means. The chains are seeded from
/// `seed` only and never see the data.
class Detector {
 public:
  Detector(DetectorConfig config, std::uint64_t seed);

  /// Feeds Ybar_t for the next step. Returns false once the test has fired
  /// (further calls are rejected).
  bool observe(const Eigen::Ref<const Vector>& ybar);

  bool stopped() const { return stopped_; }
  int steps() const { return t_; }
  const DetectionReport& report() const { return report_; }
  /// Bootstrap statistics R_t^{G,(b)} of the most recent tested step.
  const std::vector<double>& last_bootstrap() const { return last_bootstrap_; }

 private:
  void advance_chains();
  void test();

  DetectorConfig cfg_;
  GaussianSampler sampler_;
  std::vector<Rng> rngs_;
  Matrix chain_y_;       // d x B current iterates
  Matrix chain_ybar_;    // d x B running means
  Matrix chain_hist_;    // d x (B n); column b n + t - 1 holds chain b's Ybar_t
  CusumTracker data_;
  Vector z_;
  double inv_sqrt_k_;
  double offset_;
  int t_ = 0;
  bool stopped_ = false;
  std::vector<double> last_bootstrap_;
  DetectionReport report_;
};

/// Runs the test over a stored trajectory.
DetectionReport detect(const Trajectory& traj, const DetectorConfig& config, std::uint64_t seed);

/// Runs the test alongside a live local SGD run, stopping the run when the
/// test fires.
DetectionReport detect_live(const RunConfig& run, const std::optional<AttackSpec>& attack,
                            const DetectorConfig& config, std::uint64_t detector_seed);

struct WarmStart {
  Matrix a_hat;
  Matrix v_hat;
  Vector theta_hat;
};

/// A_hat by central finite differences of the recorded sample gradients and
/// V_hat by the covariance of sum_k w_k grad f_k over the last `window`
/// recorded steps, both at the pre-run's final running mean.
WarmStart warm_start_estimates(const ModelOracle& oracle, const Trajectory& pre_run, int window,
                               double fd_step = 1e-5);

struct PowerRow {
  double mu = 0.0;
  int reps = 0;
  double detect_prob = 0.0;
  double s0_mean = 0.0, s0_lo = 0.0, s0_hi = 0.0;
  double t0_mean = 0.0, t0_lo = 0.0, t0_hi = 0.0;
  int detections = 0;
};

struct PowerSetup {
  RunConfig run;             // seed is replaced per replication
  DetectorConfig detector;
  int t0 = 1;
  std::vector<int> poisoned;
  int reps = 100;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Detection probability and the mean and 95% central interval of s0_hat and
/// T0_hat among detected runs for one attack (none for the null). `label`
/// fills the mu column.
PowerRow detection_power_row(const std::optional<AttackSpec>& attack, double label, const PowerSetup& setup);

/// One row per mean-shift size mu; mu = 0 is the null.
std::vector<PowerRow> detection_power_table(const std::vector<double>& mu_grid, const PowerSetup& setup);

void write_power_csv(const std::vector<PowerRow>& rows, const std::filesystem::path& path,
                     const std::vector<std::string>& header_comments = {});

}  // namespace fedga
