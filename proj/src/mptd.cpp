#include "xdiff/mptd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "xdiff/rng.hpp"

namespace xdiff {
namespace {

struct StepRef {
  const Trajectory* traj;
  int t;
};

// The `count` refs nearest to `key`; all refs when there is no query.
std::vector<StepRef> nearest_steps(std::vector<StepRef> refs,
                                   const std::optional<MetaQuery>& query) {
  if (!query || int(refs.size()) <= query->neighbors) return refs;
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Eigen::VectorXd k = observation_key(refs[i].traj->steps[refs[i].t]);
    dist.emplace_back((k - query->key).squaredNorm(), i);
  }
  std::stable_sort(dist.begin(), dist.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<StepRef> out;
  out.reserve(std::size_t(query->neighbors));
  for (int i = 0; i < query->neighbors; ++i) out.push_back(refs[dist[i].second]);
  return out;
}

const EmbodimentSpec& spec_of(const Dataset& dataset, int id) {
  for (const auto& s : dataset.embodiments)
    if (s.id == id) return s;
  throw std::out_of_range("dataset has no embodiment " + std::to_string(id));
}

}  // namespace

std::vector<MetaAction> build_meta_actions(const Dataset& dataset, int task_key,
                                           const EmbodimentSpec& target,
                                           const UnifiedActionLayout& layout,
                                           int horizon,
                                           const std::optional<MetaQuery>& query) {
  std::vector<StepRef> own, other;
  for (const auto& traj : dataset.trajectories) {
    if (traj.task_key != task_key) continue;
    auto& bucket = traj.embodiment_id == target.id ? own : other;
    for (int t = 0; t < int(traj.steps.size()); ++t) bucket.push_back({&traj, t});
  }
  if (other.empty()) return {};
  own = nearest_steps(std::move(own), query);
  other = nearest_steps(std::move(other), query);

  std::vector<ActionChunk> own_chunks, other_chunks;
  for (const auto& r : own) own_chunks.push_back(chunk_at(*r.traj, r.t, horizon));
  for (const auto& r : other) other_chunks.push_back(chunk_at(*r.traj, r.t, horizon));

  std::vector<MetaAction> out;
  for (int w = 0; w < layout.window_count(); ++w) {
    const int target_dims = target.active_dims[w];
    if (target_dims == 0) continue;
    const int begin = layout.window(w).begin;

    // Without own data the target's centroid is unknown; use the zero segment.
    Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(horizon, target_dims);
    for (const auto& c : own_chunks) centroid += c.middleCols(begin, target_dims);
    if (!own_chunks.empty()) centroid /= double(own_chunks.size());

    double best = std::numeric_limits<double>::infinity();
    int best_i = -1;
    int best_dims = 0;
    for (std::size_t i = 0; i < other_chunks.size(); ++i) {
      const int src_dims =
          spec_of(dataset, other[i].traj->embodiment_id).active_dims[w];
      const int shared = std::min(src_dims, target_dims);
      if (shared == 0) continue;
      const double d = (other_chunks[i].middleCols(begin, shared) -
                        centroid.leftCols(shared))
                           .squaredNorm();
      if (d < best) {
        best = d;
        best_i = int(i);
        best_dims = src_dims;
      }
    }
    if (best_i < 0) continue;
    MetaAction m;
    m.source_embodiment = other[best_i].traj->embodiment_id;
    m.segment_window = w;
    m.values = other_chunks[best_i].middleCols(begin, best_dims);
    m.task_key = task_key;
    out.push_back(std::move(m));
  }
  return out;
}

void validate(const MptdConfig& c, const UnifiedActionLayout& layout) {
  if (!(c.m1 > c.m0)) throw std::invalid_argument("mptd: M1 must exceed M0");
  if (c.budget < layout.window_count())
    throw std::invalid_argument("mptd: budget must be at least the window count");
  if (c.branching < 1) throw std::invalid_argument("mptd: branching must be >= 1");
  if (c.jumpy_interval < 1)
    throw std::invalid_argument("mptd: jumpy interval must be >= 1");
  if (!(c.exploration >= 0.0))
    throw std::invalid_argument("mptd: exploration scale must be >= 0");
  if (!(c.guidance_weight >= 0.0 && c.guidance_weight <= 1.0))
    throw std::invalid_argument("mptd: guidance weight must lie in [0, 1]");
}

double node_value(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& y, double m0,
                  double m1) {
  return segment_value(x.transpose(), y.transpose(), m0, m1);
}

int select_child(const std::vector<MptdNode>& nodes, int parent,
                 double exploration) {
  const MptdNode& p = nodes.at(parent);
  if (p.children.empty()) throw std::logic_error("select_child on a leaf");
  const double log_n = std::log(double(std::max<long>(p.visits, 1)));
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int id : p.children) {
    const MptdNode& c = nodes[id];
    const double score =
        c.visits == 0 ? std::numeric_limits<double>::infinity()
                      : c.mean_value() +
                            exploration * std::sqrt(log_n / double(c.visits));
    if (score > best_score) {
      best_score = score;
      best = id;
    }
  }
  return best;
}

int stage_level(int w, int window_count, int steps) {
  return steps - (w * steps) / window_count;
}

nlohmann::json SearchTrace::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["evaluations"] = evaluations;
  j["selected_path"] = selected_path;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& n : nodes)
    arr.push_back({{"id", n.id},
                   {"parent", n.parent},
                   {"window", n.depth - 1},
                   {"depth", n.depth},
                   {"guidance", n.guidance == Guidance::external ? "external" : "self"},
                   {"candidate", n.candidate},
                   {"level", n.level},
                   {"visits", n.visits},
                   {"value_sum", n.value_sum},
                   {"self_simulations", n.self_simulations},
                   {"children", n.children}});
  j["nodes"] = arr;
  return j;
}

namespace {

class TreeSearch {
 public:
  TreeSearch(const X0Predictor& predictor, const ConditioningBundle& cond,
             int horizon, const NoiseSchedule& schedule,
             const EbfCovariance& cov, const EmbodimentSpec& target,
             const UnifiedActionLayout& layout,
             const std::vector<MetaAction>& meta, const MptdConfig& config,
             std::uint64_t seed)
      : predictor_(counting(predictor, evaluations_)),
        cond_(cond),
        horizon_(horizon),
        schedule_(schedule),
        cov_(cov),
        target_(target),
        layout_(layout),
        config_(config),
        seed_(seed),
        meta_(std::size_t(layout.window_count()), nullptr) {
    for (const auto& m : meta) {
      if (m.segment_window < 0 || m.segment_window >= layout.window_count())
        throw std::invalid_argument("meta-action window out of range");
      if (m.values.rows() != horizon || !m.values.allFinite())
        throw std::invalid_argument("meta-action has bad shape or values");
      meta_[std::size_t(m.segment_window)] = &m;
    }
  }

  MptdResult run() {
    const int windows = layout_.window_count();
    MptdNode root;
    root.path_seed = seed_;
    root.level = schedule_.steps;
    root.partial_sample = ebf_noise(horizon_, cov_, init_noise_seed(seed_));
    nodes_.push_back(std::move(root));

    for (int iter = 0; iter < config_.budget; ++iter) {
      std::vector<int> path{0};
      int current = 0;
      int simulated = -1;
      while (true) {
        MptdNode& n = nodes_[std::size_t(current)];
        if (n.depth == windows) {
          simulated = current;
          break;
        }
        if (n.expanded_slots < slot_count(n.depth)) {
          simulated = expand(current);
          path.push_back(simulated);
          break;
        }
        current = select_child(nodes_, current, config_.exploration);
        path.push_back(current);
      }
      const double value = simulate(simulated, iter);
      nodes_[std::size_t(simulated)].self_simulations += 1;
      for (int id : path) {
        nodes_[std::size_t(id)].visits += 1;
        nodes_[std::size_t(id)].value_sum += value;
      }
    }

    // Greedy descent on mean value, then finish the remaining levels one by one
    // (guided windows stay guided).
    std::vector<int> chosen{0};
    int current = 0;
    while (!nodes_[std::size_t(current)].children.empty()) {
      current = select_child(nodes_, current, 0.0);
      chosen.push_back(current);
    }
    const MptdNode& leaf = nodes_[std::size_t(current)];
    ActionChunk chunk = leaf.partial_sample;
    if (leaf.level > 0)
      chunk = denoise_levels(predictor_, chunk, cond_, leaf.level, 0, 1,
                             schedule_, cov_, leaf.path_seed,
                             guidance_hook(current, -1));
    chunk = chunk.cwiseMax(-1.0).cwiseMin(1.0);

    MptdResult result;
    result.chunk = std::move(chunk);
    result.trace.seed = seed_;
    result.trace.selected_path = std::move(chosen);
    result.trace.evaluations = evaluations_;
    result.trace.nodes = std::move(nodes_);
    return result;
  }

 private:
  // Blends the meta-action into the x0 estimate for every externally guided
  // window on the path to `node_id`, plus `extra_window` when >= 0.
  X0Hook guidance_hook(int node_id, int extra_window) const {
    std::vector<int> windows;
    if (extra_window >= 0) windows.push_back(extra_window);
    for (int id = node_id; id > 0; id = nodes_[std::size_t(id)].parent)
      if (nodes_[std::size_t(id)].guidance == Guidance::external)
        windows.push_back(nodes_[std::size_t(id)].depth - 1);
    if (windows.empty()) return {};
    struct Blend {
      const MetaAction* meta;
      int begin;
      int shared;
    };
    std::vector<Blend> blends;
    for (int window : windows) {
      const MetaAction* m = meta_[std::size_t(window)];
      blends.push_back({m, layout_.window(window).begin,
                        std::min<int>(target_.active_dims[std::size_t(window)],
                                      int(m->values.cols()))});
    }
    const double lambda = config_.guidance_weight;
    return [blends, lambda](ActionChunk& x0, int) {
      for (const Blend& b : blends)
        x0.middleCols(b.begin, b.shared) =
            (1.0 - lambda) * x0.middleCols(b.begin, b.shared) +
            lambda * b.meta->values.leftCols(b.shared);
    };
  }

  int slot_count(int depth) const {
    return config_.branching * (meta_[std::size_t(depth)] ? 2 : 1);
  }

  int expand(int parent_id) {
    MptdNode& parent = nodes_[std::size_t(parent_id)];
    const int slot = parent.expanded_slots++;
    const bool has_meta = meta_[std::size_t(parent.depth)] != nullptr;
    const int candidate = has_meta ? slot / 2 : slot;
    const Guidance guidance = has_meta && slot % 2 == 1 ? Guidance::external
                                                        : Guidance::self_denoise;
    const std::uint64_t seed =
        candidate == 0 ? parent.path_seed
                       : mix_seed(parent.path_seed, 0xC0DEu + std::uint64_t(candidate));
    const int window = parent.depth;
    const int to = stage_level(window + 1, layout_.window_count(), schedule_.steps);

    const X0Hook hook =
        guidance_hook(parent_id, guidance == Guidance::external ? window : -1);
    ActionChunk next = denoise_levels(predictor_, parent.partial_sample, cond_,
                                      parent.level, to, 1, schedule_, cov_, seed,
                                      hook);
    MptdNode child;
    child.id = int(nodes_.size());
    child.parent = parent_id;
    child.depth = window + 1;
    child.guidance = guidance;
    child.candidate = candidate;
    child.path_seed = seed;
    child.level = to;
    child.partial_sample = std::move(next);
    nodes_[std::size_t(parent_id)].children.push_back(child.id);
    nodes_.push_back(std::move(child));
    return int(nodes_.size()) - 1;
  }

  double simulate(int node_id, int iteration) {
    const MptdNode& n = nodes_[std::size_t(node_id)];
    ActionChunk x0 = n.partial_sample;
    if (n.level > 0)
      x0 = denoise_levels(predictor_, x0, cond_, n.level, 0,
                          config_.jumpy_interval, schedule_, cov_,
                          mix_seed(seed_, 0x5100u + std::uint64_t(iteration)),
                          guidance_hook(node_id, -1));
    x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
    double total = 0.0;
    for (int w = 0; w < layout_.window_count(); ++w) {
      const MetaAction* m = meta_[std::size_t(w)];
      if (!m) continue;
      total += segment_value(
          x0.middleCols(layout_.window(w).begin, target_.active_dims[std::size_t(w)]),
          m->values, config_.m0, config_.m1);
    }
    return total;
  }

  long evaluations_ = 0;
  X0Predictor predictor_;
  const ConditioningBundle& cond_;
  int horizon_;
  const NoiseSchedule& schedule_;
  const EbfCovariance& cov_;
  const EmbodimentSpec& target_;
  const UnifiedActionLayout& layout_;
  const MptdConfig& config_;
  std::uint64_t seed_;
  std::vector<const MetaAction*> meta_;
  std::vector<MptdNode> nodes_;
};

}  // namespace

MptdResult mptd_sample(const X0Predictor& predictor,
                       const ConditioningBundle& cond, int horizon,
                       const NoiseSchedule& schedule, const EbfCovariance& cov,
                       const EmbodimentSpec& target,
                       const UnifiedActionLayout& layout,
                       const std::vector<MetaAction>& meta_actions,
                       const MptdConfig& config, std::uint64_t seed) {
  validate(config, layout);
  validate(target, layout);
  return TreeSearch(predictor, cond, horizon, schedule, cov, target, layout,
                    meta_actions, config, seed)
      .run();
}

}  // namespace xdiff
