#include "xdiff/projection.hpp"

#include <Eigen/Eigenvalues>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace xdiff {

Projection project_features(const Eigen::MatrixXd& features, int dims) {
  if (features.rows() < 1 || features.cols() < 1)
    throw std::invalid_argument("project_features: no samples");
  if (dims < 1 || dims > features.cols())
    throw std::invalid_argument("project_features: bad output dimension");
  if (!features.allFinite())
    throw std::invalid_argument("project_features: non-finite features");

  Projection p;
  p.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / double(std::max<Eigen::Index>(1, features.rows() - 1));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd ascending = solver.eigenvalues();
  const Eigen::Index n = ascending.size();
  p.eigenvalues = ascending.reverse();
  const double tol = 1e-12 * std::max(1.0, cov.trace());
  p.rank = int((p.eigenvalues.array() > tol).count());
  p.degenerate = p.rank < dims;

  p.axes = Eigen::MatrixXd::Zero(features.cols(), dims);
  for (int k = 0; k < std::min(dims, p.rank); ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - k);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    p.axes.col(k) = v;
  }
  p.coords = centered * p.axes;
  return p;
}

std::string projection_csv(const Projection& p, const std::vector<std::string>& labels) {
  if (labels.size() != std::size_t(p.coords.rows()))
    throw std::invalid_argument("projection_csv: one label per sample required");
  std::ostringstream out;
  out << "label";
  for (Eigen::Index k = 0; k < p.coords.cols(); ++k) out << ",pc" << k + 1;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
    out << labels[std::size_t(i)];
    for (Eigen::Index k = 0; k < p.coords.cols(); ++k) out << ',' << p.coords(i, k);
    out << '\n';
  }
  if (p.degenerate) out << "# degenerate: rank " << p.rank << '\n';
  return out.str();
}

}  // namespace xdiff
