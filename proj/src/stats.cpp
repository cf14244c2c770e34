#include "fedga/stats.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "fedga/linalg.hpp"

namespace fedga {

EmpiricalSample::EmpiricalSample(std::vector<double> values, std::string label)
    : values_(std::move(values)), label_(std::move(label)) {
  if (values_.empty()) throw std::invalid_argument("empirical sample '" + label_ + "' is empty");
  for (double v : values_)
    if (!std::isfinite(v)) throw std::invalid_argument("empirical sample '" + label_ + "' has non-finite values");
  sorted_ = values_;
  std::sort(sorted_.begin(), sorted_.end());
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile level outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double EmpiricalSample::quantile(double p) const { return quantile_sorted(sorted_, p); }

double EmpiricalSample::cdf(double x) const {
  const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
  return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

Cdf chi_cdf(int dof) {
  if (dof < 1) throw std::invalid_argument("chi_cdf: degrees of freedom must be >= 1");
  if (dof == 2) return [](double x) { return x <= 0 ? 0.0 : -std::expm1(-0.5 * x * x); };
  return [dof](double x) { return x <= 0 ? 0.0 : boost::math::gamma_p(0.5 * dof, 0.5 * x * x); };
}

double kolmogorov_vs_reference(const EmpiricalSample& sample, const Cdf& reference, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("kolmogorov_vs_reference: c must be positive");
  const auto& xs = sample.sorted();
  const double n = static_cast<double>(xs.size());
  double sup = 0.0;
  // At each order statistic the empirical CDF jumps from (i)/n to (i+1)/n.
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = xs[i];
    if (x < 0.0 || x > c) continue;
    std::size_t j = i;
    while (j + 1 < xs.size() && xs[j + 1] == x) ++j;
    const double f = reference(x);
    sup = std::max(sup, std::abs(static_cast<double>(i) / n - f));
    sup = std::max(sup, std::abs(static_cast<double>(j + 1) / n - f));
    i = j;
  }
  constexpr int grid = 1000;
  for (int g = 0; g <= grid; ++g) {
    const double x = c * g / grid;
    sup = std::max(sup, std::abs(sample.cdf(x) - reference(x)));
  }
  return sup;
}

EmpiricalSample whiten(const Matrix& endpoints, const Matrix& scaling, std::string label) {
  if (scaling.rows() != endpoints.rows()) throw std::invalid_argument("whiten: dimension mismatch");
  const Matrix root = inverse_sqrt(scaling, "whitening scaling");
  const Matrix w = root * endpoints;
  std::vector<double> norms(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index i = 0; i < w.cols(); ++i) norms[i] = w.col(i).norm();
  return EmpiricalSample(std::move(norms), std::move(label));
}

double max_partial_sum(const Matrix& ys, const Vector& center) {
  if (ys.cols() == 0) throw std::invalid_argument("max_partial_sum: empty trajectory");
  Vector sum = Vector::Zero(ys.rows());
  double best = 0.0;
  for (Eigen::Index t = 0; t < ys.cols(); ++t) {
    sum += ys.col(t) - center;
    best = std::max(best, sum.norm());
  }
  return best;
}

double max_norm(const Matrix& partial_sums) {
  double best = 0.0;
  for (Eigen::Index t = 0; t < partial_sums.cols(); ++t) best = std::max(best, partial_sums.col(t).norm());
  return best;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

QuantileReport quantile_discrepancy(const EmpiricalSample& base, const EmpiricalSample& approx,
                                    const std::vector<double>& alpha_grid) {
  if (alpha_grid.empty()) throw std::invalid_argument("quantile_discrepancy: empty alpha grid");
  QuantileReport rep;
  rep.alphas = alpha_grid;
  for (double a : alpha_grid) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("quantile_discrepancy: alpha outside (0, 1)");
    const double qb = base.quantile(1.0 - a);
    const double qa = approx.quantile(1.0 - a);
    if (qb == 0.0)
      throw std::invalid_argument("quantile_discrepancy: base quantile is zero at alpha=" + std::to_string(a));
    rep.q_base.push_back(qb);
    rep.q_approx.push_back(qa);
    const double rel = std::abs(qb - qa) / std::abs(qb);
    if (rel > rep.discrepancy) {
      rep.discrepancy = rel;
      rep.argmax_alpha = a;
    }
  }
  return rep;
}

void write_qq_csv(const std::filesystem::path& path, const std::vector<double>& alphas,
                  const EmpiricalSample& base, const EmpiricalSample& fclt, const EmpiricalSample& aggr,
                  const EmpiricalSample& client, const std::vector<std::string>& header_comments) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "alpha,q_base,q_fclt,q_aggr,q_client\n";
  out << std::setprecision(6);
  for (double a : alphas) {
    const double p = 1.0 - a;
    out << a << ',' << base.quantile(p) << ',' << fclt.quantile(p) << ',' << aggr.quantile(p) << ','
        << client.quantile(p) << '\n';
  }
}

namespace {

// s |Ybar_s - Ybar_t|; the single definition shared by every CUSUM path.
inline double cusum_term(const Eigen::Ref<const Matrix>& ybars, Eigen::Index s_col, Eigen::Index t_col) {
  return static_cast<double>(s_col + 1) * (ybars.col(s_col) - ybars.col(t_col)).norm();
}

CusumValue cusum_prefix(const Eigen::Ref<const Matrix>& ybars, int t) {
  CusumValue best{0.0, 1};
  for (int s = 1; s <= t; ++s) {
    const double v = cusum_term(ybars, s - 1, t - 1);
    if (v > best.r) best = {v, s};
  }
  return best;
}

}  // namespace

CusumValue cusum(const Eigen::Ref<const Matrix>& ybars, int t) {
  if (t < 1 || t > ybars.cols()) throw std::out_of_range("cusum: t outside [1, n]");
  return cusum_prefix(ybars, t);
}

CusumTracker::CusumTracker(int dim, int capacity) : ybars_(dim, std::max(capacity, 1)) {}

void CusumTracker::push(const Eigen::Ref<const Vector>& ybar) {
  if (size_ == ybars_.cols()) ybars_.conservativeResize(Eigen::NoChange, 2 * ybars_.cols());
  ybars_.col(size_++) = ybar;
}

CusumValue CusumTracker::current() const {
  if (size_ == 0) throw std::logic_error("CusumTracker: no observations");
  return cusum_prefix(ybars_, size_);
}

}  // namespace fedga
