#include <doctest.h>

#include <random>
#include <map>
#include <set>
#include <sstream>

#include "xdiff/projection.hpp"

using namespace xdiff;

namespace {

// Mean silhouette coefficient with Euclidean distances.
double silhouette(const Eigen::MatrixXd& x, const std::vector<int>& label) {
  const Eigen::Index n = x.rows();
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by_label;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      auto& e = by_label[label[std::size_t(j)]];
      e.first += (x.row(i) - x.row(j)).norm();
      e.second += 1;
    }
    const auto own = by_label[label[std::size_t(i)]];
    const double a = own.second ? own.first / own.second : 0.0;
    double b = 1e300;
    for (const auto& [l, e] : by_label)
      if (l != label[std::size_t(i)] && e.second) b = std::min(b, e.first / e.second);
    total += (b - a) / std::max(a, b);
  }
  return total / double(n);
}

}  // namespace

TEST_SUITE("projection") {

TEST_CASE("identical samples project to the origin") {
  const Eigen::MatrixXd f = Eigen::RowVector4d(0.1, 0.2, -0.3, 0.4).replicate(6, 1);
  const Projection p = project_features(f);
  CHECK(p.coords.isZero(0.0));
  CHECK(p.degenerate);
  CHECK(p.rank == 0);
  const std::string csv = projection_csv(p, std::vector<std::string>(6, "a"));
  CHECK(csv.find("# degenerate") != std::string::npos);
}

TEST_CASE("two clusters separated on one axis stay separated") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 0.1);
  Eigen::MatrixXd f(40, 4);
  std::vector<int> label;
  for (int i = 0; i < 40; ++i) {
    const int l = i < 20 ? 0 : 1;
    f.row(i) << (l ? 2.0 : -2.0) + n(rng), n(rng), n(rng), n(rng);
    label.push_back(l);
  }
  const Projection p = project_features(f);
  CHECK_FALSE(p.degenerate);
  CHECK(silhouette(p.coords, label) > 0.5);
  CHECK(std::abs(p.axes(0, 0)) > 0.99);
}

TEST_CASE("axes are orthonormal and carry the top eigenvalues") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd f(50, 4);
  for (int i = 0; i < 50; ++i) f.row(i) << 3 * n(rng), n(rng), 0.5 * n(rng), 0.1 * n(rng);
  const Projection p = project_features(f);
  CHECK((p.axes.transpose() * p.axes - Eigen::Matrix2d::Identity()).norm() < 1e-12);
  for (int k = 0; k < 2; ++k) {
    const double var = p.coords.col(k).squaredNorm() / 49.0;
    CHECK(var == doctest::Approx(p.eigenvalues[k]).epsilon(1e-10));
    Eigen::Index arg;
    p.axes.col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(p.axes(arg, k) > 0);
  }
  CHECK(p.eigenvalues[0] >= p.eigenvalues[1]);
  CHECK(p.coords.colwise().sum().norm() < 1e-10);
}

TEST_CASE("rank-one features fill only the first axis") {
  Eigen::MatrixXd f(5, 4);
  for (int i = 0; i < 5; ++i) f.row(i) = double(i) * Eigen::RowVector4d(1, 2, 0, 0);
  const Projection p = project_features(f);
  CHECK(p.rank == 1);
  CHECK(p.degenerate);
  CHECK(p.coords.col(1).isZero(0.0));
  CHECK_FALSE(p.coords.col(0).isZero(1e-9));
}

TEST_CASE("csv has one label group per embodiment") {
  Eigen::MatrixXd f = Eigen::MatrixXd::Random(9, 4);
  const std::vector<std::string> labels = {"gripper", "gripper", "gripper", "hand4", "hand4",
                                           "hand4",   "hand5",   "hand5",   "hand5"};
  std::istringstream in(projection_csv(project_features(f), labels));
  std::string line;
  std::getline(in, line);
  CHECK(line == "label,pc1,pc2");
  std::set<std::string> groups;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    groups.insert(line.substr(0, line.find(',')));
    ++rows;
  }
  CHECK(rows == 9);
  CHECK(groups.size() == 3);
  CHECK_THROWS_AS(projection_csv(project_features(f), {"x"}), std::invalid_argument);
}

}
