#pragma once

#include <Eigen/Dense>

namespace fedga {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace fedga
