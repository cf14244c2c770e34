#include "fedga/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "fedga/detect.hpp"
#include "fedga/experiments.hpp"
#include "fedga/stats.hpp"

namespace fedga {

namespace {

namespace fs = std::filesystem;

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& comments, const std::string& columns)
      : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    for (const auto& c : comments) out_ << "# " << c << '\n';
    out_ << columns << '\n' << std::setprecision(6);
  }

  template <class... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << values, first = false), ...);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

struct Context {
  const ExperimentRequest& req;
  const Config& cfg;
  std::vector<std::string> header;
  nlohmann::json outputs = nlohmann::json::array();
  nlohmann::json extra = nlohmann::json::object();

  fs::path file(const std::string& name) {
    outputs.push_back(name);
    return req.out_dir / name;
  }
};

const std::set<std::string> kModelKeys{"d", "beta0", "gamma", "sigma_set"};
const std::set<std::string> kScheduleKeys{"eta0", "k0", "beta"};
const std::set<std::string> kConnectionKeys{"connection", "bandwidth", "rho", "connection_csv"};

std::set<std::string> keys(std::initializer_list<std::set<std::string>> groups, std::set<std::string> own) {
  for (const auto& g : groups) own.insert(g.begin(), g.end());
  return own;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

FRandEffSpec model_spec(const Config& cfg, int clients, double gamma, std::uint64_t seed) {
  FRandEffSpec spec;
  spec.clients = clients;
  spec.dim = cfg.get_int("d", 2);
  spec.beta0 = to_vector(cfg.get_doubles("beta0", {2.0, -3.0}));
  spec.gamma = gamma;
  spec.sigma_set = cfg.get_doubles("sigma_set", {1, 2, 3, 4, 5});
  spec.seed = derive_seed(seed, {stream::kPopulation, std::uint64_t(clients)});
  return spec;
}

StepSchedule schedule_from(const Config& cfg, double eta0, double beta) {
  StepSchedule s{cfg.get_double("eta0", eta0), cfg.get_double("k0", 0.0), cfg.get_double("beta", beta)};
  s.validate();
  return s;
}

ConnectionSpec connection_from(const Config& cfg, const std::string& kind) {
  ConnectionSpec spec;
  spec.kind = cfg.get_string("connection", kind);
  spec.bandwidth = cfg.get_int("bandwidth", 1);
  spec.rho = cfg.get_double("rho", 0.0);
  spec.path = cfg.get_string("connection_csv", "");
  return spec;
}

int positive(const Config& cfg, const std::string& key, int fallback) {
  const int v = cfg.get_int(key, fallback);
  if (v < 1) throw ConfigError("config key '" + key + "' must be >= 1");
  return v;
}

/// Shared driver of the d~_c tables: one row per (K, gamma, rho, n, tau).
void distance_table(Context& ctx, const std::string& csv_name, bool with_rho, const std::vector<int>& k_grid,
                    const std::vector<double>& gamma_grid, const std::vector<double>& rho_grid,
                    const std::vector<int>& n_grid, const std::vector<int>& tau_grid, const StepSchedule& schedule,
                    const ConnectionSpec& base_conn, int reps, double c, InitMode init, int se_resamples) {
  const std::string columns = with_rho ? "n,K,tau,rho,gamma,beta,reps,d_tilde_c" : "n,K,tau,gamma,beta,reps,d_tilde_c";
  CsvWriter csv(ctx.file(csv_name), ctx.header, columns);
  nlohmann::json ses = nlohmann::json::array();
  for (int k : k_grid)
    for (double gamma : gamma_grid) {
      auto oracle = make_frandeff(model_spec(ctx.cfg, k, gamma, ctx.req.seed));
      for (double rho : rho_grid) {
        ConnectionSpec conn = base_conn;
        if (with_rho) {
          conn.kind = "rho";
          conn.rho = rho;
        }
        const ConnectionMatrix cm = make_connection(conn, k);
        for (int n : n_grid)
          for (int tau : tau_grid) {
            EndpointStudy study;
            study.oracle = oracle;
            study.connection = cm;
            study.schedule = schedule;
            study.n = n;
            study.tau = tau;
            study.reps = reps;
            study.seed = derive_seed(ctx.req.seed, {std::uint64_t(k)});
            study.workers = ctx.req.workers;
            study.init = init;
            const DistanceEstimate est = berry_esseen_distance(study, Whitening::kSigmaN, c, se_resamples);
            if (with_rho)
              csv.row(n, k, tau, rho, gamma, schedule.beta, reps, est.value);
            else
              csv.row(n, k, tau, gamma, schedule.beta, reps, est.value);
            nlohmann::json entry = {{"n", n}, {"K", k}, {"tau", tau}, {"gamma", gamma}, {"d_tilde_c", est.value},
                                    {"se", est.se}};
            if (with_rho) entry["rho"] = rho;
            ses.push_back(entry);
          }
      }
    }
  ctx.extra["points"] = ses;
}

void run_berry_esseen_family(Context& ctx, const std::string& id) {
  const Config& cfg = ctx.cfg;
  const bool rho_mode = id == "ablate_rho";
  cfg.require_known(keys({kModelKeys, kScheduleKeys, kConnectionKeys},
                         {"K_grid", "n_grid", "tau_grid", "gamma_grid", "rho_grid", "reps", "c", "init",
                          "se_resamples"}));
  std::vector<int> n_grid{100, 200, 300, 400, 500}, tau_grid{10, 15, 20};
  std::vector<double> gamma_grid{1.0};
  int reps = 1000;
  if (id == "ablate_tau") {
    n_grid = {100, 200, 300};
    tau_grid = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  } else if (id == "ablate_rho") {
    n_grid = {100, 200, 300};
    tau_grid = {10};
  } else if (id == "ablate_gamma") {
    n_grid = {100, 200, 300};
    tau_grid = {2};
    gamma_grid = {1, 2, 3, 4, 5};
    reps = 500;
  }
  const std::vector<double> rho_grid =
      rho_mode ? cfg.get_doubles("rho_grid", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) : std::vector<double>{0.0};
  distance_table(ctx, id + ".csv", rho_mode, cfg.get_ints("K_grid", {10}), cfg.get_doubles("gamma_grid", gamma_grid),
                 rho_grid, cfg.get_ints("n_grid", n_grid), cfg.get_ints("tau_grid", tau_grid),
                 schedule_from(cfg, 0.3, 0.75), connection_from(cfg, "banded"), positive(cfg, "reps", reps),
                 cfg.get_double("c", 100.0), parse_init(cfg.get_string("init", "theta_star")),
                 cfg.get_int("se_resamples", 200));
}

void run_phase_transition(Context& ctx) {
  const Config& cfg = ctx.cfg;
  cfg.require_known(keys({kModelKeys, kConnectionKeys},
                         {"r_grid", "beta_grid", "n_grid", "tau", "eta0", "k0", "gamma", "reps", "c", "init",
                          "se_resamples"}));
  const auto r_grid = cfg.get_doubles("r_grid", {0.2, 0.6});
  const auto beta_grid = cfg.get_doubles("beta_grid", {0.85, 0.9, 0.95});
  const auto n_grid = cfg.get_ints("n_grid", {100, 200, 300, 400, 500});
  const int tau = positive(cfg, "tau", 5);
  const int reps = positive(cfg, "reps", 1000);
  const double gamma = cfg.get_double("gamma", 0.0);
  const double c = cfg.get_double("c", 100.0);
  const InitMode init = parse_init(cfg.get_string("init", "zero"));
  const ConnectionSpec conn = connection_from(cfg, "banded");
  CsvWriter csv(ctx.file("phase_transition.csv"), ctx.header, "n,K,r,beta,d_dagger_c");
  nlohmann::json points = nlohmann::json::array();
  for (double r : r_grid)
    for (double beta : beta_grid) {
      StepSchedule schedule{cfg.get_double("eta0", 0.5), cfg.get_double("k0", 0.0), beta};
      schedule.validate();
      for (int n : n_grid) {
        const int k = std::max(1, static_cast<int>(std::floor(std::pow(static_cast<double>(n), r) + 1e-9)));
        EndpointStudy study;
        study.oracle = make_frandeff(model_spec(cfg, k, gamma, ctx.req.seed));
        study.connection = make_connection(conn, k);
        study.schedule = schedule;
        study.n = n;
        study.tau = tau;
        study.reps = reps;
        study.seed = derive_seed(ctx.req.seed, {std::uint64_t(k)});
        study.workers = ctx.req.workers;
        study.init = init;
        const DistanceEstimate est =
            berry_esseen_distance(study, Whitening::kSigmaAsymptotic, c, cfg.get_int("se_resamples", 200));
        csv.row(n, k, r, beta, est.value);
        points.push_back({{"n", n}, {"K", k}, {"r", r}, {"beta", beta}, {"d_dagger_c", est.value}, {"se", est.se}});
      }
    }
  ctx.extra["points"] = points;
}

std::string number_tag(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

void run_qq(Context& ctx) {
  const Config& cfg = ctx.cfg;
  cfg.require_known(keys({kModelKeys, kScheduleKeys, kConnectionKeys},
                         {"n", "K_grid", "tau_grid", "gamma_grid", "chains", "init", "fclt_scale"}));
  const int n = positive(cfg, "n", 500);
  const int chains = positive(cfg, "chains", 500);
  const StepSchedule schedule = schedule_from(cfg, 0.7, 0.85);
  const ConnectionSpec conn = connection_from(cfg, "banded");
  const InitMode init = parse_init(cfg.get_string("init", "zero"));
  const FcltScale scale = parse_fclt_scale(cfg.get_string("fclt_scale", "sigma"));
  CsvWriter summary(ctx.file("q_summary.csv"), ctx.header, "K,tau,gamma,Q_fclt,Q_aggr,Q_client");
  nlohmann::json points = nlohmann::json::array();
  for (int k : cfg.get_ints("K_grid", {10, 25, 50}))
    for (double gamma : cfg.get_doubles("gamma_grid", {1.0})) {
      auto oracle = make_frandeff(model_spec(cfg, k, gamma, ctx.req.seed));
      for (int tau : cfg.get_ints("tau_grid", {20})) {
        PathStudy study;
        study.base.oracle = oracle;
        study.base.connection = make_connection(conn, k);
        study.base.schedule = schedule;
        study.base.n = n;
        study.base.tau = tau;
        study.base.reps = chains;
        study.base.seed = derive_seed(ctx.req.seed, {std::uint64_t(k)});
        study.base.workers = ctx.req.workers;
        study.base.init = init;
        study.fclt_scale = scale;
        const PathStudyResult res = path_study(study);
        const std::string name = "qq_K" + std::to_string(k) + "_tau" + std::to_string(tau) + "_gamma" +
                                 number_tag(gamma) + ".csv";
        write_qq_csv(ctx.file(name), default_alpha_grid(), res.u_base, res.u_fclt, res.u_aggr, res.u_client,
                     ctx.header);
        summary.row(k, tau, gamma, res.q_fclt.discrepancy, res.q_aggr.discrepancy, res.q_client.discrepancy);
        points.push_back({{"K", k},
                          {"tau", tau},
                          {"gamma", gamma},
                          {"Q_fclt", res.q_fclt.discrepancy},
                          {"Q_aggr", res.q_aggr.discrepancy},
                          {"Q_client", res.q_client.discrepancy}});
      }
    }
  ctx.extra["points"] = points;
}

void run_detect_power(Context& ctx) {
  const Config& cfg = ctx.cfg;
  cfg.require_known(keys({kModelKeys, kScheduleKeys, kConnectionKeys},
                         {"model", "attack", "w0", "K", "n", "tau", "t0", "K0", "mu_grid", "reps", "B", "alpha",
                          "c_thresh", "cadence", "init", "detector_inputs", "warm_steps", "warm_window"}));
  const std::string model = cfg.get_string("model", "frandeff");
  const std::string attack_kind = cfg.get_string("attack", model == "logistic" ? "label_flip" : "mean_shift");
  const bool logistic = model == "logistic";
  if (!logistic && model != "frandeff") throw ConfigError("unknown model '" + model + "' (frandeff, logistic)");
  if (attack_kind != "mean_shift" && attack_kind != "label_flip")
    throw ConfigError("unknown attack '" + attack_kind + "' (mean_shift, label_flip)");

  const int k = positive(cfg, "K", logistic ? 5 : 10);
  const int n = positive(cfg, "n", logistic ? 200 : 500);
  const int tau = positive(cfg, "tau", logistic ? 5 : 20);
  const int t0 = positive(cfg, "t0", logistic ? 50 : n / 2);
  const int k0 = positive(cfg, "K0", logistic ? 3 : k / 2);
  if (k0 > k) throw ConfigError("K0 must not exceed K");
  std::shared_ptr<const ModelOracle> oracle;
  if (logistic) {
    const int d = cfg.get_int("d", 3);
    const Vector w0 = to_vector(cfg.get_doubles("w0", {1.0, -1.0, 0.5}));
    if (w0.size() != d) throw ConfigError("w0 must have d entries");
    oracle = std::make_shared<LogisticOracle>(sample_logistic(
        k, d, w0, cfg.get_double("gamma", 0.5), derive_seed(ctx.req.seed, {stream::kPopulation, std::uint64_t(k)})));
  } else {
    oracle = make_frandeff(model_spec(cfg, k, cfg.get_double("gamma", 1.0), ctx.req.seed));
  }

  PowerSetup setup;
  setup.run.n = n;
  setup.run.tau = tau;
  setup.run.connection = make_connection(connection_from(cfg, "banded"), k);
  setup.run.schedule = schedule_from(cfg, 0.3, 0.75);
  setup.run.oracle = oracle;
  setup.t0 = t0;
  for (int i = 0; i < k0; ++i) setup.poisoned.push_back(i);
  setup.reps = positive(cfg, "reps", 500);
  setup.seed = ctx.req.seed;
  setup.workers = ctx.req.workers;

  DetectorConfig& det = setup.detector;
  det.alpha = cfg.get_double("alpha", 0.05);
  det.bootstrap = cfg.get_int("B", 500);
  det.c_thresh = cfg.get_double("c_thresh", 0.1);
  det.schedule = setup.run.schedule;
  det.n = n;
  det.clients = k;
  det.cadence = parse_cadence(cfg.get_string("cadence", "sync"));
  det.tau = tau;

  const std::string init = cfg.get_string("init", "theta_star");
  const std::string inputs = cfg.get_string("detector_inputs", logistic ? "warm_start" : "analytic");
  const bool need_warm = init == "warm_start" || inputs == "warm_start";
  if (need_warm) {
    RunConfig pre = setup.run;
    pre.n = positive(cfg, "warm_steps", 200);
    pre.record_draws = true;
    pre.record_clients = init == "warm_start";
    pre.seed = derive_seed(ctx.req.seed, {stream::kReplication, 0xfeedULL});
    const Trajectory warm = run_local_sgd(pre);
    if (init == "warm_start") setup.run.theta0 = warm.thetas.back();
    if (inputs == "warm_start") {
      const WarmStart ws = warm_start_estimates(*oracle, warm, positive(cfg, "warm_window", pre.n));
      det.hessian = ws.a_hat;
      det.v_k = ws.v_hat;
    }
  }
  if (init == "zero") {
    setup.run.theta0 = Matrix::Zero(oracle->dim(), k);
  } else if (init == "theta_star") {
    setup.run.theta0 = initial_iterates(*oracle, InitMode::kThetaStar);
  } else if (init != "warm_start") {
    throw ConfigError("unknown init '" + init + "' (zero, theta_star, warm_start)");
  }
  if (inputs == "analytic") {
    det.hessian = oracle->hessian();
    det.v_k = model_noise_covariance(*oracle, derive_seed(ctx.req.seed, {0x5eedULL}));
  } else if (inputs != "warm_start") {
    throw ConfigError("unknown detector_inputs '" + inputs + "' (analytic, warm_start)");
  }

  std::vector<PowerRow> rows;
  if (attack_kind == "label_flip") {
    rows.push_back(detection_power_row(std::nullopt, 0.0, setup));
    rows.push_back(detection_power_row(AttackSpec{t0, setup.poisoned, LabelFlip{}}, 1.0, setup));
  } else {
    rows = detection_power_table(cfg.get_doubles("mu_grid", {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0}), setup);
  }
  write_power_csv(rows, ctx.file("detect_power.csv"), ctx.header);
  nlohmann::json points = nlohmann::json::array();
  for (const auto& r : rows)
    points.push_back({{"mu", r.mu}, {"detect_prob", r.detect_prob}, {"detections", r.detections}, {"reps", r.reps}});
  ctx.extra["points"] = points;
  ctx.extra["A"] = std::vector<double>(det.hessian.data(), det.hessian.data() + det.hessian.size());
  ctx.extra["V_K"] = std::vector<double>(det.v_k.data(), det.v_k.data() + det.v_k.size());
}

void run_theory_checks(Context& ctx) {
  const Config& cfg = ctx.cfg;
  cfg.require_known(keys({kModelKeys, kScheduleKeys}, {"K", "n_max", "chains"}));
  TheoryCheckConfig tc;
  tc.model = model_spec(cfg, positive(cfg, "K", 10), cfg.get_double("gamma", 1.0), ctx.req.seed);
  tc.schedule = schedule_from(cfg, 0.5, 0.75);
  tc.n_max = positive(cfg, "n_max", 1600);
  tc.chains = positive(cfg, "chains", 10000);
  tc.seed = ctx.req.seed;
  tc.workers = ctx.req.workers;
  const auto results = theory_checks(tc);
  CsvWriter csv(ctx.file("theory_checks.csv"), ctx.header, "check,status,value,target");
  nlohmann::json checks = nlohmann::json::array();
  bool all_pass = true;
  for (const auto& r : results) {
    csv.row(r.name, r.status, r.value, r.target);
    checks.push_back({{"name", r.name}, {"status", r.status}, {"value", r.value}, {"target", r.target},
                      {"detail", r.detail}});
    all_pass = all_pass && r.status != "fail";
  }
  ctx.extra["checks"] = checks;
  ctx.extra["all_pass"] = all_pass;
}

}  // namespace

const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids{"berry_esseen", "phase_transition", "qq",           "ablate_tau",
                                            "ablate_rho",   "ablate_gamma",     "detect_power", "theory_checks"};
  return ids;
}

nlohmann::json run_experiment(const ExperimentRequest& request) {
  const auto& ids = experiment_ids();
  if (std::find(ids.begin(), ids.end(), request.id) == ids.end())
    throw ConfigError("unknown experiment '" + request.id + "'");
  if (request.workers < 1) throw ConfigError("workers must be >= 1");
  std::error_code ec;
  fs::create_directories(request.out_dir, ec);
  if (ec || !fs::is_directory(request.out_dir))
    throw std::runtime_error("cannot create output directory " + request.out_dir.string());
  {
    const fs::path probe = request.out_dir / ".fedga_write_probe";
    std::ofstream test(probe);
    if (!test) throw std::runtime_error("output directory " + request.out_dir.string() + " is not writable");
    test.close();
    fs::remove(probe, ec);
  }

  Context ctx{request, request.config, {}, nlohmann::json::array(), nlohmann::json::object()};
  ctx.header.push_back("experiment=" + request.id);
  ctx.header.push_back("seed=" + std::to_string(request.seed));
  for (const auto& line : request.config.echo()) ctx.header.push_back(line);

  const auto start = std::chrono::steady_clock::now();
  if (request.id == "phase_transition")
    run_phase_transition(ctx);
  else if (request.id == "qq")
    run_qq(ctx);
  else if (request.id == "detect_power")
    run_detect_power(ctx);
  else if (request.id == "theory_checks")
    run_theory_checks(ctx);
  else
    run_berry_esseen_family(ctx, request.id);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::json summary{{"experiment", request.id},
                         {"seed", request.seed},
                         {"workers", request.workers},
                         {"config", request.config.entries()},
                         {"wall_time_s", wall},
                         {"outputs", ctx.outputs},
                         {"results", ctx.extra}};
  std::ofstream out(request.out_dir / (request.id + "_summary.json"));
  if (!out) throw std::runtime_error("cannot write summary JSON");
  out << summary.dump(2) << '\n';
  return summary;
}

}  // namespace fedga
