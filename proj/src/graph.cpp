#include "fedga/graph.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace fedga {

const char* to_string(ConnectionDefect defect) {
  switch (defect) {
    case ConnectionDefect::kNotSquare: return "not square";
    case ConnectionDefect::kAsymmetric: return "not symmetric";
    case ConnectionDefect::kRowSums: return "row sums differ from 1";
    case ConnectionDefect::kNegativeEntry: return "negative entry";
    case ConnectionDefect::kZeroDiagonal: return "non-positive diagonal entry";
    case ConnectionDefect::kDisconnected: return "second eigenvalue modulus >= 1 (graph not connected)";
    case ConnectionDefect::kBadParameter: return "invalid constructor parameter";
  }
  return "unknown defect";
}

InvalidConnection::InvalidConnection(ConnectionDefect defect, const std::string& detail)
    : std::invalid_argument(std::string("connection matrix rejected: ") + to_string(defect) +
                            (detail.empty() ? "" : " (" + detail + ")")),
      defect_(defect) {}

bool ConnectionMatrix::is_uniform() const {
  const double u = 1.0 / size();
  return (entries_.array() == u).all();
}

ConnectionMatrix validate_connection(const Matrix& c) {
  if (c.rows() != c.cols() || c.rows() == 0)
    throw InvalidConnection(ConnectionDefect::kNotSquare,
                            std::to_string(c.rows()) + "x" + std::to_string(c.cols()));
  if (!c.allFinite()) throw InvalidConnection(ConnectionDefect::kNegativeEntry, "non-finite entry");
  const Eigen::Index k = c.rows();

  const double asym = (c - c.transpose()).cwiseAbs().maxCoeff();
  if (asym > kConnectionTolerance)
    throw InvalidConnection(ConnectionDefect::kAsymmetric, "max |C - C^T| = " + std::to_string(asym));

  const double row_err = (c.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (row_err > kConnectionTolerance)
    throw InvalidConnection(ConnectionDefect::kRowSums, "max |C1 - 1| = " + std::to_string(row_err));

  if (c.minCoeff() < 0.0)
    throw InvalidConnection(ConnectionDefect::kNegativeEntry, "min entry " + std::to_string(c.minCoeff()));

  for (Eigen::Index i = 0; i < k; ++i)
    if (!(c(i, i) > 0.0))
      throw InvalidConnection(ConnectionDefect::kZeroDiagonal, "row " + std::to_string(i));

  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (c + c.transpose()), Eigen::EigenvaluesOnly);
  Vector ev = es.eigenvalues().reverse();  // decreasing
  double rho = 0.0;
  if (k > 1) {
    std::vector<double> mods(ev.data(), ev.data() + k);
    for (auto& m : mods) m = std::abs(m);
    std::sort(mods.begin(), mods.end(), std::greater<>());
    rho = mods[1];
  }
  if (rho >= 1.0 - 1e-10)
    throw InvalidConnection(ConnectionDefect::kDisconnected, "rho = " + std::to_string(rho));
  return ConnectionMatrix(c, std::move(ev), rho);
}

ConnectionMatrix banded_connection(int clients, int bandwidth) {
  if (bandwidth < 1 || clients < 2 * bandwidth + 1)
    throw InvalidConnection(ConnectionDefect::kBadParameter,
                            "banded connection needs K >= 2*bandwidth+1, got K=" +
                                std::to_string(clients) + ", bandwidth=" + std::to_string(bandwidth));
  const double w = 1.0 / (2 * bandwidth + 1);
  Matrix c = Matrix::Zero(clients, clients);
  for (int i = 0; i < clients; ++i)
    for (int off = -bandwidth; off <= bandwidth; ++off) c(i, ((i + off) % clients + clients) % clients) = w;
  return validate_connection(c);
}

ConnectionMatrix rho_mix_connection(int clients, double rho) {
  if (clients < 1)
    throw InvalidConnection(ConnectionDefect::kBadParameter, "K must be positive");
  if (!(rho >= 0.0 && rho < 1.0))
    throw InvalidConnection(ConnectionDefect::kBadParameter,
                            "rho must lie in [0, 1), got " + std::to_string(rho));
  Matrix c = Matrix::Constant(clients, clients, (1.0 - rho) / clients);
  c.diagonal().array() += rho;
  return validate_connection(c);
}

ConnectionMatrix uniform_connection(int clients) {
  if (clients < 1)
    throw InvalidConnection(ConnectionDefect::kBadParameter, "K must be positive");
  return validate_connection(Matrix::Constant(clients, clients, 1.0 / clients));
}

ConnectionMatrix load_connection_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open connection CSV " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("connection CSV " + path.string() + ": bad number '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const auto k = static_cast<Eigen::Index>(rows.size());
  Matrix c(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != k)
      throw InvalidConnection(ConnectionDefect::kNotSquare,
                              "row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                                  " entries, expected " + std::to_string(k));
    for (Eigen::Index j = 0; j < k; ++j) c(i, j) = rows[i][j];
  }
  return validate_connection(c);
}

}  // namespace fedga
