#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "xdiff/mptd.hpp"
#include "xdiff/rng.hpp"

using namespace xdiff;

namespace {

// Node value written out element by element.
double straight_line_value(const std::vector<double>& x, const std::vector<double>& y,
                           double m0, double m1) {
  double s = 0.0;
  if (x.size() == y.size()) {
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return m0 - s;
  }
  const std::size_t d = x.size() < y.size() ? x.size() : y.size();
  for (std::size_t i = 0; i < d; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return m1 - s;
}

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  Eigen::VectorXd out(Eigen::Index(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[Eigen::Index(i)] = v[i];
  return out;
}

ConditioningBundle cond0() {
  return {Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(8), 1, 0};
}

// Posterior mean under a N(0, s^2) prior, i.e. a model fitted to zero-mean data.
X0Predictor prior_model(const NoiseSchedule& sched, const EbfCovariance& cov, double s) {
  return [&sched, &cov, s](const ActionChunk& x, const ConditioningBundle& c) {
    const double ab = sched.alpha_bar(c.timestep);
    ActionChunk out(x.rows(), x.cols());
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      const double n2 = (1 - ab) * cov.scale[d] * cov.scale[d];
      out.col(d) = std::sqrt(ab) * s * s / (ab * s * s + n2) * x.col(d);
    }
    return out;
  };
}

std::vector<MetaAction> constant_meta(const EmbodimentSpec& target,
                                      const UnifiedActionLayout& layout, int H,
                                      double value) {
  std::vector<MetaAction> out;
  for (int w = 0; w < layout.window_count(); ++w) {
    if (target.active_dims[std::size_t(w)] == 0) continue;
    MetaAction m;
    m.segment_window = w;
    m.values = Eigen::MatrixXd::Constant(H, target.active_dims[std::size_t(w)], value);
    out.push_back(m);
  }
  return out;
}

void check_conservation(const SearchTrace& t, int budget, int windows) {
  REQUIRE_FALSE(t.nodes.empty());
  CHECK(t.nodes[0].visits == budget);
  for (const auto& n : t.nodes) {
    long child_visits = 0;
    for (int c : n.children) child_visits += t.nodes[std::size_t(c)].visits;
    CHECK(n.visits == child_visits + n.self_simulations);
    CHECK(n.depth <= windows);
    CHECK(std::isfinite(n.value_sum));
  }
}

Trajectory random_traj(int embodiment, int task, int len, std::mt19937_64& rng,
                       const EmbodimentSpec& spec, const UnifiedActionLayout& layout) {
  std::normal_distribution<double> n(0, 0.5);
  Trajectory t;
  t.embodiment_id = embodiment;
  t.task_key = task;
  const PaddingMask mask = padding_mask(spec, layout);
  for (int i = 0; i < len; ++i) {
    TrajectoryStep s;
    s.context = Eigen::VectorXd(8);
    s.proprio = Eigen::VectorXd(8);
    s.action = Eigen::VectorXd(12);
    for (auto& v : s.context) v = n(rng);
    for (auto& v : s.proprio) v = n(rng);
    for (int d = 0; d < 12; ++d) s.action[d] = mask[d] ? n(rng) : 0.0;
    t.steps.push_back(s);
  }
  return t;
}

}  // namespace

TEST_SUITE("mptd") {

TEST_CASE("node value examples") {
  CHECK(node_value(Eigen::Vector3d(0.2, -0.1, 0.4), Eigen::Vector3d(0.2, -0.1, 0.4), 1.0, 1.1) == 1.0);
  Eigen::VectorXd y(1);
  y << 0.3;
  CHECK(node_value(Eigen::Vector3d(0.3, 5.0, -2.0), y, 1.0, 1.1) == 1.1);
  Eigen::VectorXd a(1), b(1);
  a << 0.5;
  b << 0.1;
  CHECK(node_value(a, b, 1.0, 1.1) == doctest::Approx(0.84).epsilon(1e-15));
}

TEST_CASE("node value agrees with a straight-line implementation") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> dim(1, 5);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(std::size_t(dim(rng))), y(std::size_t(dim(rng)));
    for (auto& v : x) v = n(rng);
    for (auto& v : y) v = n(rng);
    const double m0 = n(rng), m1 = m0 + 0.1;
    CHECK(node_value(to_vec(x), to_vec(y), m0, m1) == straight_line_value(x, y, m0, m1));
  }
}

TEST_CASE("value laws") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 50; ++i) {
    Eigen::Vector3d x(n(rng), n(rng), n(rng)), y(n(rng), n(rng), n(rng));
    CHECK(node_value(x, y, 1.0, 1.1) <= 1.0);
    CHECK(node_value(y, y, 1.0, 1.1) == 1.0);
    Eigen::Vector2d y2 = y.head<2>();
    CHECK(node_value(x, y2, 1.0, 1.1) <= 1.1);
    // Same distance, different dimensionality: differs by exactly M1 - M0.
    Eigen::Vector3d y3(y2[0], y2[1], x[2]);
    CHECK(node_value(x, y2, 1.0, 1.1) - node_value(x, y3, 1.0, 1.1) ==
          doctest::Approx(0.1).epsilon(1e-12));
  }
}

TEST_CASE("config validation") {
  const auto layout = UnifiedActionLayout::reference();
  MptdConfig c;
  CHECK_NOTHROW(validate(c, layout));
  c.m1 = c.m0;
  CHECK_THROWS_AS(validate(c, layout), std::invalid_argument);
  c = MptdConfig{};
  c.budget = 3;
  CHECK_THROWS_AS(validate(c, layout), std::invalid_argument);
  c = MptdConfig{};
  c.branching = 0;
  CHECK_THROWS_AS(validate(c, layout), std::invalid_argument);
}

TEST_CASE("stage levels split K across windows") {
  CHECK(stage_level(0, 4, 50) == 50);
  CHECK(stage_level(1, 4, 50) == 38);
  CHECK(stage_level(2, 4, 50) == 25);
  CHECK(stage_level(3, 4, 50) == 13);
  CHECK(stage_level(4, 4, 50) == 0);
}

TEST_CASE("select_child: exploitation and ties") {
  std::vector<MptdNode> nodes(4);
  nodes[0].children = {1, 2, 3};
  nodes[0].visits = 9;
  nodes[1].visits = 3;
  nodes[1].value_sum = 1.5;
  nodes[2].visits = 3;
  nodes[2].value_sum = 2.4;
  nodes[3].visits = 3;
  nodes[3].value_sum = 2.4;
  CHECK(select_child(nodes, 0, 0.0) == 2);
  nodes[1].visits = 1;
  nodes[1].value_sum = 0.5;
  CHECK(select_child(nodes, 0, 0.0) == 2);
  CHECK(select_child(nodes, 0, 100.0) == 1);
  nodes[3].visits = 0;
  CHECK(select_child(nodes, 0, 0.0) == 3);
  CHECK_THROWS_AS(select_child(nodes, 1, 0.0), std::logic_error);
}

TEST_CASE("conservation, depth and UCT balance on full searches") {
  const auto layout = UnifiedActionLayout::reference();
  const auto sched = build_cosine_schedule(50);
  const auto spec = builtin_embodiments()[2];
  const auto cov = build_ebf_covariance(spec, layout, 0.5);
  const auto model = prior_model(sched, cov, 0.5);
  const auto meta = constant_meta(spec, layout, 4, 0.3);
  for (int budget : {4, 9, 24}) {
    MptdConfig c;
    c.budget = budget;
    const auto r = mptd_sample(model, cond0(), 4, sched, cov, spec, layout, meta, c, 3);
    check_conservation(r.trace, budget, 4);
    CHECK(r.chunk.cwiseAbs().maxCoeff() <= 1.0);
  }
  MptdConfig wide;
  wide.exploration = 1e9;
  wide.branching = 2;
  wide.budget = 37;
  const auto r = mptd_sample(model, cond0(), 4, sched, cov, spec, layout, meta, wide, 5);
  check_conservation(r.trace, 37, 4);
  for (const auto& n : r.trace.nodes) {
    if (n.children.empty()) continue;
    long lo = std::numeric_limits<long>::max(), hi = 0;
    for (int c : n.children) {
      lo = std::min(lo, r.trace.nodes[std::size_t(c)].visits);
      hi = std::max(hi, r.trace.nodes[std::size_t(c)].visits);
    }
    const bool fully_expanded = n.expanded_slots == int(n.children.size()) &&
                                int(n.children.size()) == 2 * wide.branching;
    if (fully_expanded) CHECK(hi - lo <= 1);
  }
}

TEST_CASE("returned path follows the highest mean at every level") {
  const auto layout = UnifiedActionLayout::reference();
  const auto sched = build_cosine_schedule(50);
  const auto spec = builtin_embodiments()[0];
  const auto cov = build_ebf_covariance(spec, layout, 0.5);
  const auto model = prior_model(sched, cov, 0.5);
  for (double c : {0.0, 3.0}) {
    MptdConfig cfg;
    cfg.exploration = c;
    cfg.branching = 2;
    cfg.budget = 20;
    const auto r = mptd_sample(model, cond0(), 4, sched, cov, spec, layout,
                               constant_meta(spec, layout, 4, 0.3), cfg, 8);
    const auto& path = r.trace.selected_path;
    REQUIRE(path.front() == 0);
    for (std::size_t i = 1; i < path.size(); ++i) {
      const auto& parent = r.trace.nodes[std::size_t(path[i - 1])];
      int best = parent.children.front();
      for (int id : parent.children)
        if (r.trace.nodes[std::size_t(id)].mean_value() >
            r.trace.nodes[std::size_t(best)].mean_value())
          best = id;
      CHECK(path[i] == best);
    }
    CHECK(r.trace.nodes[std::size_t(path.back())].children.empty());
  }
}

TEST_CASE("degenerate tree reproduces sample_full") {
  const auto layout = UnifiedActionLayout::reference();
  const auto sched = build_cosine_schedule(50);
  for (const auto& spec : builtin_embodiments()) {
    const auto cov = build_ebf_covariance(spec, layout, 0.5);
    const auto model = prior_model(sched, cov, 0.7);
    MptdConfig c;
    c.budget = 4;
    c.branching = 1;
    for (std::uint64_t seed : {0u, 11u}) {
      SamplerConfig sc;
      sc.seed = seed;
      const auto r = mptd_sample(model, cond0(), 16, sched, cov, spec, layout, {}, c, seed);
      CHECK(r.chunk == sample_full(model, cond0(), 16, sched, cov, sc));
    }
  }
}

TEST_CASE("trace replay is deterministic") {
  const auto layout = UnifiedActionLayout::reference();
  const auto sched = build_cosine_schedule(50);
  const auto spec = builtin_embodiments()[1];
  const auto cov = build_ebf_covariance(spec, layout, 0.5);
  const auto model = prior_model(sched, cov, 0.5);
  const auto meta = constant_meta(spec, layout, 8, -0.2);
  const auto a = mptd_sample(model, cond0(), 8, sched, cov, spec, layout, meta, {}, 99);
  const auto b = mptd_sample(model, cond0(), 8, sched, cov, spec, layout, meta, {}, 99);
  CHECK(a.chunk == b.chunk);
  CHECK(a.trace.to_json() == b.trace.to_json());
  CHECK(a.trace.evaluations > 0);
  const auto j = a.trace.to_json();
  CHECK(j["nodes"].size() == a.trace.nodes.size());
  CHECK(j["nodes"][1].contains("guidance"));
}

TEST_CASE("external guidance toward the expert segment scores higher") {
  const auto layout = UnifiedActionLayout::reference();
  const auto sched = build_cosine_schedule(50);
  const auto spec = builtin_embodiments()[2];
  const auto cov = build_ebf_covariance(spec, layout, 0.5);
  const auto model = prior_model(sched, cov, 0.3);
  const auto meta = constant_meta(spec, layout, 8, 0.6);
  MptdConfig c;
  c.budget = 12;
  double external = 0.0, self = 0.0;
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = mptd_sample(model, cond0(), 8, sched, cov, spec, layout, meta, c, seed);
    double e = 0, s = 0;
    int ne = 0, ns = 0;
    for (int id : r.trace.nodes[0].children) {
      const auto& n = r.trace.nodes[std::size_t(id)];
      if (n.guidance == Guidance::external) {
        e += n.mean_value();
        ++ne;
      } else {
        s += n.mean_value();
        ++ns;
      }
    }
    REQUIRE(ne > 0);
    REQUIRE(ns > 0);
    external += e / ne;
    self += s / ns;
    if (e / ne > s / ns) ++wins;
  }
  CHECK(external > self);
  CHECK(wins >= 15);
}

TEST_CASE("meta-actions: singleton, empty, and brute-force nearest neighbour") {
  const auto layout = UnifiedActionLayout::reference();
  const auto specs = builtin_embodiments();
  std::mt19937_64 rng(5);

  Dataset ds;
  ds.embodiments = specs;
  Trajectory own = random_traj(2, 0, 1, rng, specs[2], layout);
  ds.trajectories.push_back(own);
  CHECK(build_meta_actions(ds, 0, specs[2], layout, 4).empty());

  Trajectory twin = own;
  twin.embodiment_id = 1;
  for (int d = 0; d < 12; ++d)
    if (!padding_mask(specs[1], layout)[d]) twin.steps[0].action[d] = 0.0;
  ds.trajectories.push_back(twin);
  const auto single = build_meta_actions(ds, 0, specs[2], layout, 4);
  REQUIRE(single.size() == 4);
  for (const auto& m : single) {
    const int w = m.segment_window;
    CHECK(m.source_embodiment == 1);
    CHECK(m.values.cols() == specs[1].active_dims[std::size_t(w)]);
    const ActionChunk c = chunk_at(twin, 0, 4);
    CHECK(m.values == Eigen::MatrixXd(c.middleCols(layout.window(w).begin, m.values.cols())));
  }

  Dataset big;
  big.embodiments = specs;
  for (int i = 0; i < 20; ++i) {
    const int e = i % 3;
    big.trajectories.push_back(random_traj(e, i % 2, 3 + i % 4, rng, specs[std::size_t(e)], layout));
  }
  const int H = 4;
  for (const auto& target : specs) {
    for (int task = 0; task < 2; ++task) {
      const auto meta = build_meta_actions(big, task, target, layout, H);
      for (const auto& m : meta) {
        const int w = m.segment_window;
        const int begin = layout.window(w).begin;
        const int td = target.active_dims[std::size_t(w)];
        Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(H, td);
        int count = 0;
        for (const auto& t : big.trajectories)
          if (t.task_key == task && t.embodiment_id == target.id)
            for (int s = 0; s < int(t.steps.size()); ++s, ++count)
              centroid += chunk_at(t, s, H).middleCols(begin, td);
        if (count) centroid /= count;
        double best = 1e300;
        Eigen::MatrixXd best_values;
        for (const auto& t : big.trajectories) {
          if (t.task_key != task || t.embodiment_id == target.id) continue;
          const int sd = specs[std::size_t(t.embodiment_id)].active_dims[std::size_t(w)];
          const int shared = std::min(sd, td);
          if (shared == 0) continue;
          for (int s = 0; s < int(t.steps.size()); ++s) {
            const ActionChunk c = chunk_at(t, s, H);
            double dist = 0;
            for (int h = 0; h < H; ++h)
              for (int j = 0; j < shared; ++j) {
                const double diff = c(h, begin + j) - centroid(h, j);
                dist += diff * diff;
              }
            if (dist < best) {
              best = dist;
              best_values = c.middleCols(begin, sd);
            }
          }
        }
        CHECK(m.values == best_values);
      }
    }
  }
}

}
