#include "xdiff/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "xdiff/rng.hpp"

namespace xdiff {
namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap_angle(double a) { return std::remainder(a, 2.0 * kPi); }

double clip_unit(double v) { return std::clamp(v, -1.0, 1.0); }

Eigen::Matrix2d rotation(double yaw) {
  Eigen::Matrix2d r;
  r << std::cos(yaw), -std::sin(yaw), std::sin(yaw), std::cos(yaw);
  return r;
}

bool is_gripper(const WorldState& s) { return s.finger_angles.size() == 1; }

double finger_phase(int j, int n) { return 2.0 * kPi * j / n; }

Eigen::Vector2d finger_direction(const WorldState& s, int j) {
  const double a = s.base_pose.z() + finger_phase(j, int(s.finger_angles.size()));
  return {std::cos(a), std::sin(a)};
}

// Largest r >= 0 at which the ray tip + r * u meets the object boundary, or a
// negative value when it does not.
double contact_radius(const Eigen::Vector2d& tip, const Eigen::Vector2d& u,
                      const Eigen::Vector2d& center, double radius) {
  const Eigen::Vector2d p = tip - center;
  const double b = p.dot(u);
  const double disc = b * b - p.squaredNorm() + radius * radius;
  if (disc < 0.0) return -1.0;
  return -b + std::sqrt(disc);
}

bool wrist_aligned(const WorldState& s, const Task& task,
                   const WorldConstants& world) {
  return std::abs(s.wrist.x() - task.pitch) <= world.wrist_tolerance &&
         std::abs(s.wrist.y() - task.roll) <= world.wrist_tolerance;
}

bool grasp_holds(const WorldState& s, const Task& task,
                 const WorldConstants& world) {
  const double tip_dist = (effector_tip(s, world) - s.object.position).norm();
  if (tip_dist > s.object.radius + world.grip_margin) return false;
  if (!s.object.grasped && !wrist_aligned(s, task, world)) return false;
  if (is_gripper(s)) return s.finger_angles[0] >= world.gripper_close_threshold;
  int in_band = 0;
  for (const auto& tipj : fingertips(s, world))
    if (std::abs((tipj - s.object.position).norm() - s.object.radius) <=
        world.grip_margin)
      ++in_band;
  return in_band >= 2;
}

}  // namespace

std::vector<Task> builtin_tasks() {
  return {
      {0, 0.05, -0.6, 0.4, 1.0, 1.3},
      {1, 0.08, -0.3, -0.4, 1.1, 1.4},
      {2, 0.10, 0.0, 0.0, 1.0, 1.5},
      {3, 0.12, 0.3, 0.5, 1.2, 1.5},
      {4, 0.15, 0.6, -0.2, 1.0, 1.4},
  };
}

std::vector<int> finger_channels(const EmbodimentSpec& spec,
                                 const UnifiedActionLayout& layout) {
  std::vector<int> out;
  for (int w = 2; w < layout.window_count(); ++w)
    for (int i = 0; i < spec.active_dims[std::size_t(w)]; ++i)
      out.push_back(layout.window(w).begin + i);
  return out;
}

WorldState reset_world(const EmbodimentSpec& spec,
                       const UnifiedActionLayout& layout, const Task& task,
                       std::uint64_t seed) {
  validate(spec, layout);
  Rng rng(mix_seed(seed, 0x5e7));
  std::uniform_real_distribution<double> yaw(-kPi, kPi);
  std::uniform_real_distribution<double> bearing(-1.2, 1.2);
  std::uniform_real_distribution<double> dist(task.spawn_min, task.spawn_max);
  WorldState s;
  s.base_pose = {0.0, 0.0, yaw(rng)};
  const double b = s.base_pose.z() + bearing(rng);
  const double d = dist(rng);
  s.object.position = {d * std::cos(b), d * std::sin(b)};
  s.object.radius = task.radius;
  s.finger_angles =
      Eigen::VectorXd::Zero(Eigen::Index(finger_channels(spec, layout).size()));
  s.task_key = task.key;
  return s;
}

Eigen::Vector2d effector_tip(const WorldState& s, const WorldConstants& world) {
  const double reach = world.arm_offset + s.arm_extension;
  return s.base_pose.head<2>() +
         reach * Eigen::Vector2d(std::cos(s.base_pose.z()), std::sin(s.base_pose.z()));
}

std::vector<Eigen::Vector2d> fingertips(const WorldState& s,
                                        const WorldConstants& world) {
  const Eigen::Vector2d tip = effector_tip(s, world);
  std::vector<Eigen::Vector2d> out;
  if (is_gripper(s)) {
    const double r = world.finger_open_radius * (1.0 - s.finger_angles[0]);
    const Eigen::Vector2d side(-std::sin(s.base_pose.z()), std::cos(s.base_pose.z()));
    out.push_back(tip + r * side);
    out.push_back(tip - r * side);
    return out;
  }
  for (int j = 0; j < int(s.finger_angles.size()); ++j)
    out.push_back(tip + world.finger_open_radius * (1.0 - s.finger_angles[j]) *
                            finger_direction(s, j));
  return out;
}

WorldState step(const WorldState& state, const Eigen::VectorXd& unified_action,
                const EmbodimentSpec& spec, const UnifiedActionLayout& layout,
                const Task& task, const WorldConstants& world) {
  if (unified_action.size() != layout.total_dim())
    throw std::invalid_argument("step: action length mismatch");
  const PaddingMask mask = padding_mask(spec, layout);
  auto act = [&](int d) {
    if (!mask[d]) return 0.0;
    if (!std::isfinite(unified_action[d]))
      throw std::invalid_argument("step: non-finite action");
    return clip_unit(unified_action[d]);
  };

  WorldState s = state;
  const double dt = world.dt;
  const int base = layout.window(0).begin;
  const double yaw = s.base_pose.z();
  const Eigen::Vector2d v_body(act(base + 0) * world.max_speed,
                               act(base + 1) * world.max_speed);
  s.base_pose.head<2>() += dt * (rotation(yaw) * v_body);
  s.base_pose.z() = wrap_angle(yaw + dt * act(base + 2) * world.max_yaw_rate);
  s.arm_extension = std::clamp(
      s.arm_extension + dt * act(base + 3) * world.max_arm_rate, 0.0,
      spec.reach_radius);

  const int wrist = layout.window(1).begin;
  for (int i = 0; i < 2; ++i)
    s.wrist[i] = std::clamp(s.wrist[i] + dt * act(wrist + i) * world.max_wrist_rate,
                            -world.wrist_limit, world.wrist_limit);

  if (s.object.grasped)
    s.object.position =
        effector_tip(s, world) + rotation(s.base_pose.z()) * s.object.grasp_offset;

  const std::vector<int> channels = finger_channels(spec, layout);
  const Eigen::Vector2d tip = effector_tip(s, world);
  for (std::size_t j = 0; j < channels.size(); ++j) {
    const double prev = s.finger_angles[Eigen::Index(j)];
    double next =
        std::clamp(prev + dt * act(channels[j]) * world.max_finger_rate, 0.0, 1.0);
    if (!is_gripper(s)) {
      const double rc = contact_radius(tip, finger_direction(s, int(j)),
                                       s.object.position, s.object.radius);
      const double r_prev = world.finger_open_radius * (1.0 - prev);
      const double r_next = world.finger_open_radius * (1.0 - next);
      if (rc >= 0.0 && r_prev >= rc - 1e-9 && r_next < rc)
        next = 1.0 - rc / world.finger_open_radius;
    }
    s.finger_angles[Eigen::Index(j)] = next;
  }

  const bool was_grasped = s.object.grasped;
  if (grasp_holds(s, task, world)) {
    if (!was_grasped) {
      s.object.grasped = true;
      s.object.grasp_offset =
          rotation(s.base_pose.z()).transpose() * (s.object.position - tip);
    }
    s.object.held_steps += 1;
  } else {
    s.object.grasped = false;
    s.object.held_steps = 0;
  }
  return s;
}

Eigen::VectorXd context_encoding(const WorldState& s, const WorldConstants&) {
  Eigen::VectorXd n = Eigen::VectorXd::Zero(kContextDim);
  n[s.task_key] = 1.0;
  n.segment<2>(kTaskCount) = rotation(s.base_pose.z()).transpose() *
                             (s.object.position - s.base_pose.head<2>());
  n[kTaskCount + 2] = s.object.radius;
  return n;
}

Eigen::VectorXd proprio_encoding(const WorldState& s, const EmbodimentSpec& spec,
                                 const WorldConstants& world) {
  Eigen::VectorXd p(kProprioDim);
  p[0] = s.arm_extension / spec.reach_radius;
  p[1] = s.wrist.x();
  p[2] = s.wrist.y();
  p[3] = s.finger_angles.mean();
  p[4] = s.finger_angles.minCoeff();
  p[5] = s.finger_angles.maxCoeff();
  p[6] = s.object.grasped ? 1.0 : 0.0;
  p[7] = std::min(1.0, double(s.object.held_steps) / world.success_hold_steps);
  return p;
}

Eigen::VectorXd scripted_expert(const WorldState& s, const EmbodimentSpec& spec,
                                const UnifiedActionLayout& layout,
                                const Task& task, std::uint64_t seed,
                                const WorldConstants& world) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(layout.total_dim());
  if (s.object.grasped) return a;

  const bool strafe = (mix_seed(seed, 0x57) & 1u) != 0;
  const Eigen::Vector2d rel = rotation(s.base_pose.z()).transpose() *
                              (s.object.position - s.base_pose.head<2>());
  const double dist = rel.norm();
  const double bearing = std::atan2(rel.y(), rel.x());
  const double standoff = world.arm_offset + 0.5 * spec.reach_radius;
  const double base_err = dist - standoff;
  const bool reach_phase = std::abs(bearing) < 0.15 && std::abs(base_err) < 0.12;

  const int base = layout.window(0).begin;
  if (strafe) {
    a[base + 0] = clip_unit(2.5 * base_err * std::cos(bearing) / world.max_speed);
    a[base + 1] = clip_unit(2.5 * base_err * std::sin(bearing) / world.max_speed);
    a[base + 2] = clip_unit(2.0 * bearing / world.max_yaw_rate);
  } else {
    const double forward = std::abs(bearing) < 0.3 ? 2.5 * base_err : 0.0;
    a[base + 0] = clip_unit(forward / world.max_speed);
    a[base + 2] = clip_unit(4.0 * bearing / world.max_yaw_rate);
  }

  if (reach_phase) {
    const double target = std::clamp(rel.x() - world.arm_offset, 0.0, spec.reach_radius);
    a[base + 3] = clip_unit(5.0 * (target - s.arm_extension) / world.max_arm_rate);
  }

  const int wrist = layout.window(1).begin;
  if (reach_phase || strafe) {
    a[wrist + 0] = clip_unit(5.0 * (task.pitch - s.wrist.x()) / world.max_wrist_rate);
    a[wrist + 1] = clip_unit(5.0 * (task.roll - s.wrist.y()) / world.max_wrist_rate);
  }

  const double tip_err = (effector_tip(s, world) - s.object.position).norm();
  const bool ready = reach_phase && tip_err < 0.3 * task.radius + 0.015 &&
                     std::abs(s.wrist.x() - task.pitch) < 0.05 &&
                     std::abs(s.wrist.y() - task.roll) < 0.05;
  if (ready) {
    const std::vector<int> channels = finger_channels(spec, layout);
    const int n = int(channels.size());
    if (n == 1) {
      a[channels[0]] = 1.0;
    } else {
      // Distal-most two fingers first, the rest once those are in contact.
      const Eigen::Vector2d tip = effector_tip(s, world);
      bool distal_done = true;
      for (int j = std::max(0, n - 2); j < n; ++j) {
        const double rc = contact_radius(tip, finger_direction(s, j),
                                         s.object.position, s.object.radius);
        const double contact =
            rc >= 0.0 ? 1.0 - rc / world.finger_open_radius : 1.0;
        if (s.finger_angles[j] < contact - 1e-6) distal_done = false;
        a[channels[std::size_t(j)]] = 1.0;
      }
      if (distal_done)
        for (int j = 0; j < n - 2; ++j) a[channels[std::size_t(j)]] = 1.0;
    }
  }
  return a;
}

EpisodeResult classify_episode(bool success, int steps, double min_distance,
                               const EmbodimentSpec& spec,
                               const WorldConstants& world) {
  EpisodeResult r;
  r.success = success;
  r.steps = steps;
  r.min_effector_object_distance = min_distance;
  if (success)
    r.failure_class = FailureClass::none;
  else if (min_distance > spec.reach_radius + world.reach_margin)
    r.failure_class = FailureClass::mobility;
  else
    r.failure_class = FailureClass::interaction;
  return r;
}

namespace {

EpisodeResult run_episode(const Policy& policy, const EmbodimentSpec& spec,
                          const UnifiedActionLayout& layout, const Task& task,
                          std::uint64_t episode_seed, const EvalOptions& options) {
  const WorldConstants world;
  WorldState s = reset_world(spec, layout, task, episode_seed);
  double min_dist = (effector_tip(s, world) - s.object.position).norm();
  ActionChunk chunk;
  int row = 0;
  std::uint64_t plan = 0;
  bool success = false;
  int t = 0;
  while (t < options.max_steps) {
    if (chunk.rows() == 0 || row >= options.replan_stride || row >= chunk.rows()) {
      Observation obs{context_encoding(s, world), proprio_encoding(s, spec, world),
                      task.key, &s};
      chunk = policy(obs, mix_seed(episode_seed, plan++));
      if (chunk.cols() != layout.total_dim() || chunk.rows() == 0)
        throw std::runtime_error("policy returned a malformed chunk");
      row = 0;
    }
    s = step(s, chunk.row(row++).transpose(), spec, layout, task, world);
    ++t;
    min_dist = std::min(min_dist, (effector_tip(s, world) - s.object.position).norm());
    if (s.object.held_steps >= world.success_hold_steps) {
      success = true;
      break;
    }
  }
  return classify_episode(success, t, min_dist, spec, world);
}

}  // namespace

EvalSummary evaluate(const Policy& policy, const EmbodimentSpec& spec,
                     const UnifiedActionLayout& layout,
                     const std::vector<Task>& tasks, int episodes,
                     std::uint64_t seed, const EvalOptions& options) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: no tasks");
  if (options.replan_stride < 1) throw std::invalid_argument("evaluate: bad stride");
  EvalSummary summary;
  for (int i = 0; i < episodes; ++i) {
    const Task& task = tasks[std::size_t(i) % tasks.size()];
    EpisodeResult r =
        run_episode(policy, spec, layout, task, mix_seed(seed, std::uint64_t(i)), options);
    ++summary.episodes;
    if (r.success) ++summary.successes;
    if (r.failure_class == FailureClass::mobility) ++summary.mobility;
    if (r.failure_class == FailureClass::interaction) ++summary.interaction;
    summary.results.push_back(r);
  }
  return summary;
}

Policy expert_policy(const EmbodimentSpec& spec, const UnifiedActionLayout& layout,
                     const std::vector<Task>& tasks, int horizon) {
  return [spec, layout, tasks, horizon](const Observation& obs, std::uint64_t seed) {
    if (!obs.state) throw std::invalid_argument("expert policy needs world state");
    const Task& task = tasks.at(std::size_t(obs.task_key));
    WorldState s = *obs.state;
    ActionChunk chunk(horizon, layout.total_dim());
    for (int h = 0; h < horizon; ++h) {
      const Eigen::VectorXd a = scripted_expert(s, spec, layout, task, seed);
      chunk.row(h) = a.transpose();
      s = step(s, a, spec, layout, task);
    }
    return chunk;
  };
}

std::pair<Trajectory, bool> rollout_expert(const EmbodimentSpec& spec,
                                           const UnifiedActionLayout& layout,
                                           const Task& task, std::uint64_t seed,
                                           int max_steps) {
  const WorldConstants world;
  Trajectory traj;
  traj.embodiment_id = spec.id;
  traj.task_key = task.key;
  traj.seed = seed;
  traj.expert_version = "scripted-v1";
  WorldState s = reset_world(spec, layout, task, seed);
  for (int t = 0; t < max_steps; ++t) {
    const Eigen::VectorXd a = scripted_expert(s, spec, layout, task, seed, world);
    traj.steps.push_back({context_encoding(s, world), proprio_encoding(s, spec, world), a});
    s = step(s, a, spec, layout, task, world);
    if (s.object.held_steps >= world.success_hold_steps) return {traj, true};
  }
  return {traj, false};
}

Dataset generate_dataset(const std::vector<Task>& tasks,
                         const std::vector<EmbodimentSpec>& embodiments,
                         const UnifiedActionLayout& layout, int trajs_per_pair,
                         std::uint64_t seed) {
  Dataset ds;
  ds.layout = layout;
  ds.embodiments = embodiments;
  for (const Task& task : tasks) {
    for (const EmbodimentSpec& spec : embodiments) {
      for (int j = 0; j < trajs_per_pair; ++j) {
        bool ok = false;
        for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
          const std::uint64_t ep_seed = mix_seed(
              mix_seed(mix_seed(seed, std::uint64_t(task.key)), std::uint64_t(spec.id)),
              std::uint64_t(j) * 64 + std::uint64_t(attempt));
          auto [traj, success] = rollout_expert(spec, layout, task, ep_seed);
          if (success) {
            ds.trajectories.push_back(std::move(traj));
            ok = true;
          }
        }
        if (!ok)
          throw std::runtime_error("expert failed 50 attempts for task " +
                                   std::to_string(task.key) + ", embodiment " +
                                   spec.name);
      }
    }
  }
  return ds;
}

bool replay_succeeds(const Trajectory& traj, const Dataset& dataset) {
  const WorldConstants world;
  const EmbodimentSpec* spec = nullptr;
  for (const auto& e : dataset.embodiments)
    if (e.id == traj.embodiment_id) spec = &e;
  if (!spec) return false;
  const auto tasks = builtin_tasks();
  const Task& task = tasks.at(std::size_t(traj.task_key));
  WorldState s = reset_world(*spec, dataset.layout, task, traj.seed);
  for (const auto& st : traj.steps) {
    s = step(s, st.action, *spec, dataset.layout, task, world);
    if (s.object.held_steps >= world.success_hold_steps) return true;
  }
  return false;
}

Eigen::Vector4d fingertip_features(const WorldState& s, const WorldConstants& world) {
  const auto tips = fingertips(s, world);
  const Eigen::Vector2d tip = effector_tip(s, world);
  const Eigen::Matrix2d to_local = rotation(s.base_pose.z()).transpose();
  std::size_t bi = 0, bj = 1;
  double best = -1.0;
  for (std::size_t i = 0; i < tips.size(); ++i)
    for (std::size_t j = i + 1; j < tips.size(); ++j) {
      const double d = (tips[i] - tips[j]).squaredNorm();
      if (d > best + 1e-15) {
        best = d;
        bi = i;
        bj = j;
      }
    }
  Eigen::Vector4d f;
  f.head<2>() = to_local * (tips[bi] - tip);
  f.tail<2>() = to_local * (tips[bj] - tip);
  return f;
}

}  // namespace xdiff
