#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xdiff/denoiser.hpp"
#include "xdiff/embodiment.hpp"

namespace xdiff {

struct TrajectoryStep {
  Eigen::VectorXd context;  // n_t
  Eigen::VectorXd proprio;  // p_t
  Eigen::VectorXd action;   // unified, length D
};

struct Trajectory {
  int embodiment_id = 0;
  int task_key = 0;
  std::vector<TrajectoryStep> steps;
  std::uint64_t seed = 0;
  std::string expert_version;
};

struct Dataset {
  UnifiedActionLayout layout = UnifiedActionLayout::reference();
  std::vector<EmbodimentSpec> embodiments;
  std::vector<Trajectory> trajectories;
};

/// H actions starting at step t; steps past the end repeat the final action.
ActionChunk chunk_at(const Trajectory& traj, int t, int horizon);

/// [context; proprio], the key used for nearest-neighbour lookups.
Eigen::VectorXd observation_key(const TrajectoryStep& step);

/// One sample per (trajectory, step).
std::vector<TrainSample> training_pool(const Dataset& dataset, int horizon);

/// Gzip-compressed: one JSON header line, then one JSON record per trajectory.
void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

/// Hash of the decompressed serialised content.
std::uint64_t dataset_hash(const Dataset& dataset);

}  // namespace xdiff
