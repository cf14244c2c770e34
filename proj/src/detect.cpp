#include "fedga/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "fedga/linalg.hpp"
#include "fedga/parallel.hpp"

namespace fedga {

TestCadence parse_cadence(const std::string& text) {
  if (text == "every") return TestCadence::kEvery;
  if (text == "sync") return TestCadence::kSync;
  throw std::invalid_argument("unknown test cadence '" + text + "' (expected every or sync)");
}

std::string to_string(TestCadence cadence) { return cadence == TestCadence::kEvery ? "every" : "sync"; }

void DetectorConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("detector: alpha must lie in (0, 1)");
  if (bootstrap < 100) throw std::invalid_argument("detector: B must be >= 100");
  if (!(c_thresh >= 0.0)) throw std::invalid_argument("detector: c_thresh must be nonnegative");
  if (hessian.size() == 0) throw std::invalid_argument("detector: Hessian A is missing");
  if (v_k.size() == 0) throw std::invalid_argument("detector: noise covariance V_K is missing");
  if (hessian.rows() != hessian.cols() || v_k.rows() != v_k.cols() || hessian.rows() != v_k.rows())
    throw std::invalid_argument("detector: A and V_K must be square of equal size");
  if (n < 1) throw std::invalid_argument("detector: n must be >= 1");
  if (clients < 1) throw std::invalid_argument("detector: K must be >= 1");
  if (tau < 1) throw std::invalid_argument("detector: tau must be >= 1");
  schedule.validate();
}

bool DetectorConfig::tested(int t) const { return cadence == TestCadence::kEvery || t % tau == 0; }

nlohmann::json to_json(const DetectionReport& report) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& e : report.trace)
    trace.push_back({{"t", e.t}, {"R", e.r}, {"s", e.s}, {"q", e.quantile}, {"threshold", e.threshold}});
  return {{"detected", report.detected},
          {"stopping_time", report.stopping_time},
          {"attack_instance", report.attack_instance},
          {"steps_observed", report.steps_observed},
          {"trace", trace}};
}

void write_report_json(const DetectionReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
}

Detector::Detector(DetectorConfig config, std::uint64_t seed)
    : cfg_((config.validate(), std::move(config))),
      sampler_(cfg_.clients * cfg_.v_k, "K * V_K"),
      data_(static_cast<int>(cfg_.hessian.rows()), cfg_.n),
      inv_sqrt_k_(1.0 / std::sqrt(static_cast<double>(cfg_.clients))),
      offset_(cfg_.c_thresh * std::sqrt(static_cast<double>(cfg_.n))) {
  const auto d = cfg_.hessian.rows();
  const int b_count = cfg_.bootstrap;
  rngs_.reserve(b_count);
  for (int b = 0; b < b_count; ++b) rngs_.emplace_back(derive_seed(seed, {stream::kGaussian, std::uint64_t(b)}));
  chain_y_ = Matrix::Zero(d, b_count);
  chain_ybar_ = Matrix::Zero(d, b_count);
  chain_hist_.resize(d, static_cast<Eigen::Index>(b_count) * cfg_.n);
  z_.resize(d);
  last_bootstrap_.resize(b_count);
}

void Detector::advance_chains() {
  const double eta = cfg_.schedule(t_);
  const Matrix& a = cfg_.hessian;
  const Eigen::Index n = cfg_.n;
  for (int b = 0; b < cfg_.bootstrap; ++b) {
    sampler_.sample(rngs_[b], z_);
    auto y = chain_y_.col(b);
    y = y - eta * (a * y) + (eta * inv_sqrt_k_) * z_;
    auto ybar = chain_ybar_.col(b);
    ybar += (y - ybar) / static_cast<double>(t_);
    chain_hist_.col(b * n + t_ - 1) = ybar;
  }
}

void Detector::test() {
  const Eigen::Index n = cfg_.n;
  for (int b = 0; b < cfg_.bootstrap; ++b)
    last_bootstrap_[b] = cusum(chain_hist_.middleCols(b * n, t_), t_).r;
  std::vector<double> sorted = last_bootstrap_;
  std::sort(sorted.begin(), sorted.end());
  const double q = quantile_sorted(sorted, 1.0 - cfg_.alpha);
  const CusumValue data = data_.current();
  const double threshold = q + offset_;
  report_.trace.push_back({t_, data.r, data.s, q, threshold});
  if (data.r > threshold) {
    stopped_ = true;
    report_.stopping_time = t_;
    report_.attack_instance = data.s;
    report_.detected = t_ < cfg_.n;
  }
}

bool Detector::observe(const Eigen::Ref<const Vector>& ybar) {
  if (stopped_) throw std::logic_error("detector: observe after the test fired");
  if (t_ >= cfg_.n) throw std::logic_error("detector: more than n observations");
  if (ybar.size() != cfg_.hessian.rows()) throw std::invalid_argument("detector: dimension mismatch");
  ++t_;
  report_.steps_observed = t_;
  data_.push(ybar);
  advance_chains();
  if (cfg_.tested(t_)) test();
  return !stopped_;
}

DetectionReport detect(const Trajectory& traj, const DetectorConfig& config, std::uint64_t seed) {
  Detector det(config, seed);
  const int steps = std::min(traj.steps(), config.n);
  for (int t = 1; t <= steps; ++t)
    if (!det.observe(traj.ybars.col(t - 1))) break;
  return det.report();
}

DetectionReport detect_live(const RunConfig& run, const std::optional<AttackSpec>& attack,
                            const DetectorConfig& config, std::uint64_t detector_seed) {
  if (config.n != run.n) throw std::invalid_argument("detect_live: detector and run horizons differ");
  Detector det(config, detector_seed);
  run_local_sgd(run, attack, [&](int, const Vector&, const Vector& ybar) { return det.observe(ybar); });
  return det.report();
}

WarmStart warm_start_estimates(const ModelOracle& oracle, const Trajectory& pre_run, int window, double fd_step) {
  const int d = oracle.dim();
  const int k_clients = oracle.clients();
  if (window < 10 * d)
    throw std::invalid_argument("warm start: window of " + std::to_string(window) + " steps is shorter than 10 d");
  if (static_cast<int>(pre_run.draws.size()) < window || pre_run.steps() < 1)
    throw std::invalid_argument("warm start: pre-run must record at least `window` steps of client draws");
  if (!(fd_step > 0.0)) throw std::invalid_argument("warm start: finite-difference step must be positive");

  WarmStart ws;
  ws.theta_hat = pre_run.ybars.col(pre_run.steps() - 1);
  const Vector& w = oracle.weights();
  Matrix a_sum = Matrix::Zero(d, d);
  Matrix grads(d, window);
  Vector g(d), gp(d), gm(d), th(d);
  const int first = static_cast<int>(pre_run.draws.size()) - window;
  for (int i = 0; i < window; ++i) {
    const Matrix& draws = pre_run.draws[first + i];
    Vector agg = Vector::Zero(d);
    for (int k = 0; k < k_clients; ++k) {
      oracle.gradient(k, draws.col(k), ws.theta_hat, nullptr, g);
      agg += w[k] * g;
      for (int j = 0; j < d; ++j) {
        th = ws.theta_hat;
        th[j] += fd_step;
        oracle.gradient(k, draws.col(k), th, nullptr, gp);
        th[j] -= 2.0 * fd_step;
        oracle.gradient(k, draws.col(k), th, nullptr, gm);
        a_sum.col(j) += w[k] * (gp - gm) / (2.0 * fd_step);
      }
    }
    grads.col(i) = agg;
  }
  ws.a_hat = symmetrize(a_sum / window);
  const Matrix centered = grads.colwise() - grads.rowwise().mean();
  ws.v_hat = symmetrize(centered * centered.transpose() / std::max(window - 1, 1));
  return ws;
}

namespace {

void summarize(const std::vector<double>& xs, double& mean, double& lo, double& hi) {
  if (xs.empty()) {
    mean = lo = hi = std::nan("");
    return;
  }
  double total = 0.0;
  for (double x : xs) total += x;
  mean = total / static_cast<double>(xs.size());
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  lo = quantile_sorted(sorted, 0.025);
  hi = quantile_sorted(sorted, 0.975);
}

}  // namespace

PowerRow detection_power_row(const std::optional<AttackSpec>& attack, double label, const PowerSetup& setup) {
  if (setup.reps < 1) throw std::invalid_argument("power table: reps must be >= 1");
  setup.run.validate();
  setup.detector.validate();
  std::vector<DetectionReport> reports(setup.reps);
  parallel_for(static_cast<std::size_t>(setup.reps), setup.workers, [&](std::size_t r) {
    RunConfig run = setup.run;
    run.seed = derive_seed(setup.seed, {stream::kReplication, r});
    run.client_seeds.clear();
    const std::uint64_t det_seed = derive_seed(setup.seed, {stream::kGaussian, r});
    reports[r] = detect_live(run, attack, setup.detector, det_seed);
  });
  PowerRow row;
  row.mu = label;
  row.reps = setup.reps;
  std::vector<double> s0, t0;
  for (const auto& rep : reports) {
    if (!rep.detected) continue;
    s0.push_back(rep.attack_instance);
    t0.push_back(rep.stopping_time);
  }
  row.detections = static_cast<int>(s0.size());
  row.detect_prob = static_cast<double>(row.detections) / setup.reps;
  summarize(s0, row.s0_mean, row.s0_lo, row.s0_hi);
  summarize(t0, row.t0_mean, row.t0_lo, row.t0_hi);
  return row;
}

std::vector<PowerRow> detection_power_table(const std::vector<double>& mu_grid, const PowerSetup& setup) {
  const int d = setup.run.oracle->dim();
  std::vector<PowerRow> rows;
  for (double mu : mu_grid) {
    std::optional<AttackSpec> attack;
    if (mu != 0.0) attack = mean_shift_attack(setup.t0, setup.poisoned, d, mu);
    rows.push_back(detection_power_row(attack, mu, setup));
  }
  return rows;
}

void write_power_csv(const std::vector<PowerRow>& rows, const std::filesystem::path& path,
                     const std::vector<std::string>& header_comments) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "mu,detect_prob,s0_mean,s0_lo,s0_hi,T0_mean,T0_lo,T0_hi\n" << std::setprecision(6);
  for (const auto& r : rows)
    out << r.mu << ',' << r.detect_prob << ',' << r.s0_mean << ',' << r.s0_lo << ',' << r.s0_hi << ','
        << r.t0_mean << ',' << r.t0_lo << ',' << r.t0_hi << '\n';
}

}  // namespace fedga
