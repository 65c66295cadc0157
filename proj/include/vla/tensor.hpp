#pragma once

#include <Eigen/Core>

namespace vla {

/// Row-major dense matrix; every weight and activation in the library uses it
/// so that flat indexing matches the serialized row-major layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

}  // namespace vla
