#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace xdiff {

/// Principal-component projection of row samples.
struct Projection {
  Eigen::MatrixXd coords;       // n x dims
  Eigen::VectorXd mean;         // feature centroid
  Eigen::MatrixXd axes;         // features x dims, unit columns (zero if unavailable)
  Eigen::VectorXd eigenvalues;  // all covariance eigenvalues, descending
  int rank = 0;
  bool degenerate = false;      // fewer than `dims` non-trivial directions
};

/// Centers `features` (one sample per row) and projects onto the top `dims`
/// eigenvectors of the sample covariance. Each axis is signed so its largest
/// component is positive.
Projection project_features(const Eigen::MatrixXd& features, int dims = 2);

/// label,x,y rows with a header; `degenerate` is appended as a comment line.
std::string projection_csv(const Projection& projection,
                           const std::vector<std::string>& labels);

}  // namespace xdiff
