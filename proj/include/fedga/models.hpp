#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedga/random.hpp"
#include "fedga/types.hpp"

namespace fedga {

/// Poisoned clients regress on beta_k + mu instead of beta_k.
struct MeanShift {
  Vector mu;
};
/// Poisoned clients report inverted binary labels.
struct LabelFlip {};

using AttackKind = std::variant<MeanShift, LabelFlip>;

enum class NoiseMode { kAnalytic, kMonteCarlo };

class UnsupportedMode : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Federated random-effects linear model: client k observes
/// y = x^T beta_k + eps with x ~ N(0, I_d), eps ~ N(0, sigma_k^2).
struct FRandEffPopulation {
  int dim = 0;
  Vector beta0;
  double gamma = 0.0;
  std::vector<Vector> betas;
  std::vector<double> sigmas2;
  Vector weights;
  std::uint64_t seed = 0;
  Vector theta_star;  // sum_k w_k beta_k

  int clients() const { return static_cast<int>(betas.size()); }
  /// Checks shapes, positivity and sum w_k == 1; recomputes theta_star.
  void finalize(double b1 = 0.0, double b2 = INFINITY);
};

/// Draws beta_k ~ N(beta0, gamma I) and sigma_k^2 uniformly from
/// `sigma_set`, both frozen for the lifetime of the population. Weights
/// default to uniform 1/K.
FRandEffPopulation sample_frandeff(int clients, int dim, const Vector& beta0, double gamma,
                                   const std::vector<double>& sigma_set, std::uint64_t seed,
                                   std::optional<Vector> weights = std::nullopt);

nlohmann::json to_json(const FRandEffPopulation& pop);
FRandEffPopulation frandeff_from_json(const nlohmann::json& doc);

/// Synthetic binary logistic classification task. Client k draws
/// x ~ N(0, I_d) and y ~ Bernoulli(sigmoid(x^T w_k)); a poisoned client
/// reports 1 - y.
struct LogisticPopulation {
  int dim = 0;
  Vector w0;
  double gamma = 0.0;
  std::vector<Vector> true_weights;
  Vector weights;
  std::uint64_t seed = 0;

  int clients() const { return static_cast<int>(true_weights.size()); }
  /// Flip map on labels {0, 1}; an involution.
  static int flip(int label) { return 1 - label; }
};

LogisticPopulation sample_logistic(int clients, int dim, const Vector& w0, double gamma,
                                   std::uint64_t seed);

/// Client-level stochastic optimisation problem.
///
/// Sampling is split in two: draw() consumes the client's random stream and
/// writes a fixed-size raw record (features plus a noise coordinate), and
/// gradient() turns a record into grad f_k(theta, xi). The split lets a run
/// replay identical data noise under different iterates, multipliers or
/// attack states.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual int clients() const = 0;
  virtual int draw_size() const = 0;
  virtual void draw(int client, Rng& rng, Eigen::Ref<Vector> out) const = 0;
  virtual void gradient(int client, const Eigen::Ref<const Vector>& draw,
                        const Eigen::Ref<const Vector>& theta, const AttackKind* attack,
                        Eigen::Ref<Vector> out) const = 0;
  /// grad F_k(theta).
  virtual Vector exact_gradient(int client, const Vector& theta,
                                const AttackKind* attack = nullptr) const = 0;
  virtual bool supports(const AttackKind& attack) const = 0;

  virtual const Vector& theta_star() const = 0;
  virtual const Vector& weights() const = 0;
  /// A = Hessian of sum_k w_k F_k at theta_star.
  virtual Matrix hessian() const = 0;
  /// Var(g_k(theta_star, xi)).
  virtual Matrix client_noise_covariance(int client, NoiseMode mode, int n_mc,
                                         std::uint64_t seed) const;

  /// V_K = sum_k w_k^2 Var(g_k(theta_star, xi^k)).
  Matrix noise_covariance(NoiseMode mode, int n_mc = 0, std::uint64_t seed = 0) const;
  /// grad F = sum_k w_k grad F_k.
  Vector aggregate_gradient(const Vector& theta) const;
};

class FRandEffOracle final : public ModelOracle {
 public:
  explicit FRandEffOracle(FRandEffPopulation pop);

  const FRandEffPopulation& population() const { return pop_; }

  std::string name() const override { return "frandeff"; }
  int dim() const override { return pop_.dim; }
  int clients() const override { return pop_.clients(); }
  int draw_size() const override { return pop_.dim + 1; }
  void draw(int client, Rng& rng, Eigen::Ref<Vector> out) const override;
  void gradient(int client, const Eigen::Ref<const Vector>& draw, const Eigen::Ref<const Vector>& theta,
                const AttackKind* attack, Eigen::Ref<Vector> out) const override;
  Vector exact_gradient(int client, const Vector& theta, const AttackKind* attack) const override;
  bool supports(const AttackKind& attack) const override;
  const Vector& theta_star() const override { return pop_.theta_star; }
  const Vector& weights() const override { return pop_.weights; }
  Matrix hessian() const override;
  Matrix client_noise_covariance(int client, NoiseMode mode, int n_mc,
                                 std::uint64_t seed) const override;

 private:
  Vector effective_beta(int client, const AttackKind* attack) const;
  FRandEffPopulation pop_;
};

class LogisticOracle final : public ModelOracle {
 public:
  explicit LogisticOracle(LogisticPopulation pop);

  const LogisticPopulation& population() const { return pop_; }

  std::string name() const override { return "logistic"; }
  int dim() const override { return pop_.dim; }
  int clients() const override { return pop_.clients(); }
  int draw_size() const override { return pop_.dim + 1; }
  void draw(int client, Rng& rng, Eigen::Ref<Vector> out) const override;
  void gradient(int client, const Eigen::Ref<const Vector>& draw, const Eigen::Ref<const Vector>& theta,
                const AttackKind* attack, Eigen::Ref<Vector> out) const override;
  Vector exact_gradient(int client, const Vector& theta, const AttackKind* attack) const override;
  bool supports(const AttackKind& attack) const override;
  const Vector& theta_star() const override { return theta_star_; }
  const Vector& weights() const override { return pop_.weights; }
  /// Computed by Gauss-Hermite quadrature rather than sampling.
  Matrix hessian() const override;
  Matrix hessian_at(const Vector& theta) const;

 private:
  LogisticPopulation pop_;
  Vector theta_star_;
};

/// Quadratic clients with a shared Hessian and additive Gaussian noise:
/// grad f_k(theta, xi) = A (theta - beta_k) + L z with z ~ N(0, I) and
/// L L^T = V. Uniform weights; supports mean-shift attacks.
class QuadraticOracle final : public ModelOracle {
 public:
  QuadraticOracle(Matrix hessian, std::vector<Vector> betas, const Matrix& noise_cov);

  std::string name() const override { return "quadratic"; }
  int dim() const override { return static_cast<int>(a_.rows()); }
  int clients() const override { return static_cast<int>(betas_.size()); }
  int draw_size() const override { return dim(); }
  void draw(int client, Rng& rng, Eigen::Ref<Vector> out) const override;
  void gradient(int client, const Eigen::Ref<const Vector>& draw, const Eigen::Ref<const Vector>& theta,
                const AttackKind* attack, Eigen::Ref<Vector> out) const override;
  Vector exact_gradient(int client, const Vector& theta, const AttackKind* attack) const override;
  bool supports(const AttackKind& attack) const override;
  const Vector& theta_star() const override { return theta_star_; }
  const Vector& weights() const override { return weights_; }
  Matrix hessian() const override { return a_; }
  Matrix client_noise_covariance(int client, NoiseMode mode, int n_mc,
                                 std::uint64_t seed) const override;

 private:
  Matrix a_;
  std::vector<Vector> betas_;
  Matrix v_;
  Matrix root_;
  Vector weights_;
  Vector theta_star_;
};

/// Samples one stochastic gradient grad f_k(theta, xi) from `rng`.
Vector noisy_gradient(const ModelOracle& oracle, int client, const Vector& theta, Rng& rng,
                      const AttackKind* attack = nullptr);

/// Convenience alias for the oracle's Hessian at theta_star.
inline Matrix hessian(const ModelOracle& oracle) { return oracle.hessian(); }

}  // namespace fedga
