#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "xdiff/dataset.hpp"
#include "xdiff/denoiser.hpp"
#include "xdiff/sampler.hpp"

namespace xdiff {

/// Reference segment mined from another embodiment on the same task.
/// `values` is H x (source active dims in the window).
struct MetaAction {
  int source_embodiment = 0;
  int segment_window = 0;
  Eigen::MatrixXd values;
  int task_key = 0;
};

/// Optional locality restriction: only the `neighbors` dataset steps nearest
/// to `key` (see observation_key) take part in the centroid and the search.
struct MetaQuery {
  Eigen::VectorXd key;
  int neighbors = 32;
};

/// One meta-action per window in which the target has active dims and some
/// other embodiment shares at least one leading dim. Empty when the task has
/// no heterogeneous data.
std::vector<MetaAction> build_meta_actions(
    const Dataset& dataset, int task_key, const EmbodimentSpec& target,
    const UnifiedActionLayout& layout, int horizon,
    const std::optional<MetaQuery>& query = std::nullopt);

struct MptdConfig {
  double exploration = 3.0;  // UCT constant c
  double m0 = 1.0;
  double m1 = 1.1;
  int branching = 3;
  int budget = 24;
  int jumpy_interval = 10;
  double guidance_weight = 0.3;  // lambda, kept on a guided window for the rest of its path
};

void validate(const MptdConfig& config, const UnifiedActionLayout& layout);

/// Node value for single-step segments: same dimensionality scores
/// -|x - y|^2 + M0, otherwise the shared leading dims score -|.|^2 + M1.
double node_value(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& y, double m0,
                  double m1);

/// Multi-step form: columns are dims, rows are horizon steps.
template <typename DX, typename DY>
double segment_value(const Eigen::MatrixBase<DX>& x,
                     const Eigen::MatrixBase<DY>& y, double m0, double m1) {
  if (x.rows() != y.rows())
    throw std::invalid_argument("segment_value: horizon mismatch");
  const Eigen::Index d = std::min(x.cols(), y.cols());
  // Row-major sequential sum: the result does not depend on vectorisation.
  double dist = 0.0;
  for (Eigen::Index h = 0; h < x.rows(); ++h)
    for (Eigen::Index j = 0; j < d; ++j) {
      const double diff = x(h, j) - y(h, j);
      dist += diff * diff;
    }
  return (x.cols() == y.cols() ? m0 : m1) - dist;
}

enum class Guidance { self_denoise, external };

struct MptdNode {
  int id = 0;
  int parent = -1;
  int depth = 0;  // windows fixed so far
  Guidance guidance = Guidance::self_denoise;
  int candidate = 0;
  std::uint64_t path_seed = 0;
  int level = 0;  // diffusion level of partial_sample
  ActionChunk partial_sample;
  long visits = 0;
  double value_sum = 0.0;
  long self_simulations = 0;
  int expanded_slots = 0;
  std::vector<int> children;

  double mean_value() const { return visits > 0 ? value_sum / double(visits) : 0.0; }
};

struct SearchTrace {
  std::uint64_t seed = 0;
  std::vector<MptdNode> nodes;
  std::vector<int> selected_path;
  long evaluations = 0;

  /// Nodes without their partial samples.
  nlohmann::json to_json() const;
};

struct MptdResult {
  ActionChunk chunk;
  SearchTrace trace;
};

/// UCT child choice; ties go to the lowest child index.
int select_child(const std::vector<MptdNode>& nodes, int parent,
                 double exploration);

/// Diffusion level at the start of window `w`'s sub-task (w = 0..W).
int stage_level(int w, int window_count, int steps);

MptdResult mptd_sample(const X0Predictor& predictor,
                       const ConditioningBundle& cond, int horizon,
                       const NoiseSchedule& schedule, const EbfCovariance& cov,
                       const EmbodimentSpec& target,
                       const UnifiedActionLayout& layout,
                       const std::vector<MetaAction>& meta_actions,
                       const MptdConfig& config, std::uint64_t seed);

}  // namespace xdiff
