#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fedga/types.hpp"

namespace fedga {

/// Realisations of a scalar statistic (norms, path maxima).
class EmpiricalSample {
 public:
  EmpiricalSample(std::vector<double> values, std::string label = {});

  const std::vector<double>& values() const { return values_; }
  /// Ascending copy of the values.
  const std::vector<double>& sorted() const { return sorted_; }
  const std::string& label() const { return label_; }
  std::size_t size() const { return values_.size(); }

  /// Type-7 quantile (linear interpolation of order statistics).
  double quantile(double p) const;
  /// Fraction of values <= x.
  double cdf(double x) const;

 private:
  std::vector<double> values_;
  std::vector<double> sorted_;
  std::string label_;
};

/// Type-7 quantile of an already sorted range.
double quantile_sorted(const std::vector<double>& sorted, double p);

using Cdf = std::function<double(double)>;

/// CDF of |Z| for Z ~ N(0, I_d) (chi distribution with d degrees of freedom).
Cdf chi_cdf(int dof);

/// sup over x in [0, c] of |F_emp(x) - F_ref(x)|, checking both one-sided
/// limits at every sample point in range plus a 1000-point grid.
double kolmogorov_vs_reference(const EmpiricalSample& sample, const Cdf& reference, double c);

/// |scaling^{-1/2} v| for every column v of `endpoints`.
EmpiricalSample whiten(const Matrix& endpoints, const Matrix& scaling, std::string label = {});

/// max_t |sum_{s<=t} (Y_s - center)| over the columns of `ys`.
double max_partial_sum(const Matrix& ys, const Vector& center);
/// max_t |S_t| over precomputed partial sums.
double max_norm(const Matrix& partial_sums);

struct QuantileReport {
  std::vector<double> alphas;
  std::vector<double> q_base;
  std::vector<double> q_approx;
  double discrepancy = 0.0;  // max relative quantile error
  double argmax_alpha = 0.0;
};

/// Default grid {0.01, 0.02, ..., 0.99}.
std::vector<double> default_alpha_grid();

/// max_alpha |q_{1-alpha}(base) - q_{1-alpha}(approx)| / q_{1-alpha}(base).
QuantileReport quantile_discrepancy(const EmpiricalSample& base, const EmpiricalSample& approx,
                                    const std::vector<double>& alpha_grid = default_alpha_grid());

/// Writes alpha,q_base,q_fclt,q_aggr,q_client rows.
void write_qq_csv(const std::filesystem::path& path, const std::vector<double>& alphas,
                  const EmpiricalSample& base, const EmpiricalSample& fclt, const EmpiricalSample& aggr,
                  const EmpiricalSample& client, const std::vector<std::string>& header_comments = {});

struct CusumValue {
  double r = 0.0;  // R_t
  int s = 1;       // argmax step (smallest on ties)
};

/// R_t = max_{1<=s<=t} s |Ybar_s - Ybar_t| over the columns of `ybars`
/// (column s-1 holds Ybar_s).
CusumValue cusum(const Eigen::Ref<const Matrix>& ybars, int t);

/// CUSUM over a growing sequence of running means, evaluated with the same
/// arithmetic as cusum() so offline recomputation matches exactly.
class CusumTracker {
 public:
  explicit CusumTracker(int dim, int capacity = 0);
  void push(const Eigen::Ref<const Vector>& ybar);
  int size() const { return size_; }
  CusumValue current() const;
  const Matrix& history() const { return ybars_; }

 private:
  Matrix ybars_;
  int size_ = 0;
};

}  // namespace fedga
