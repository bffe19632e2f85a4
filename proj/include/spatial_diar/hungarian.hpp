#pragma once

#include <vector>

#include <Eigen/Core>

namespace spatial_diar {

// Minimum-cost assignment for a rows x cols cost matrix (either may be the
// larger). Returns, for each row, the assigned column or -1 when the row is
// left unmatched because cols < rows.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

}  // namespace spatial_diar
