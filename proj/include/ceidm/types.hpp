#pragma once

#include <Eigen/Dense>

namespace ceidm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace ceidm
