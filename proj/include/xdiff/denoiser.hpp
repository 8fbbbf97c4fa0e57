#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xdiff/embodiment.hpp"
#include "xdiff/schedule.hpp"

namespace xdiff {

/// Sizes of the conditioning inputs and of the fully connected trunk.
struct DenoiserShape {
  int horizon = 16;
  int action_dim = 12;
  int proprio_dim = 8;
  int context_dim = 8;
  int embodiments = 3;
  int prompt_dim = 16;
  int hidden = 256;
  int hidden_layers = 3;
  int time_embed = 32;

  int chunk_size() const { return horizon * action_dim; }
  int input_dim() const {
    return chunk_size() + time_embed + proprio_dim + context_dim + prompt_dim +
           embodiments;
  }
  friend bool operator==(const DenoiserShape&, const DenoiserShape&) = default;
};

/// What the trunk is trained to output.
enum class Objective { x0, velocity };

/// All trainable weights in one contiguous vector; per-tensor views are maps
/// into it. Layer l maps layer_in(l) -> layer_out(l); the soft-prompt table
/// (embodiments x prompt_dim) comes last.
class DenoiserParams {
 public:
  struct TensorInfo {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
  };

  DenoiserParams() = default;
  explicit DenoiserParams(const DenoiserShape& shape);

  static Eigen::Index parameter_count(const DenoiserShape& shape);

  const DenoiserShape& shape() const { return shape_; }
  Eigen::Index size() const { return flat_.size(); }
  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }

  int layer_count() const { return shape_.hidden_layers + 1; }
  int layer_in(int l) const;
  int layer_out(int l) const;

  Eigen::Map<Eigen::MatrixXd> weight(int l);
  Eigen::Map<const Eigen::MatrixXd> weight(int l) const;
  Eigen::Map<Eigen::VectorXd> bias(int l);
  Eigen::Map<const Eigen::VectorXd> bias(int l) const;
  Eigen::Map<Eigen::MatrixXd> prompts();
  Eigen::Map<const Eigen::MatrixXd> prompts() const;

  std::vector<TensorInfo> tensors() const;

 private:
  Eigen::Index weight_offset(int l) const;

  DenoiserShape shape_;
  Eigen::VectorXd flat_;
};

/// Proprioception p_t, context n_t, diffusion level k, embodiment e.
struct ConditioningBundle {
  Eigen::VectorXd proprio;
  Eigen::VectorXd context;
  int timestep = 1;
  int embodiment_id = 0;
};

struct TrainSample {
  ActionChunk clean;
  ConditioningBundle cond;  // timestep ignored: drawn by the loss
};
using TrainBatch = std::vector<TrainSample>;

using CovarianceTable = std::map<int, EbfCovariance>;

/// Any x0 model: (noisy chunk, conditioning incl. level) -> clean estimate.
using X0Predictor =
    std::function<ActionChunk(const ActionChunk&, const ConditioningBundle&)>;

/// Random init: scaled normal weights, zero biases, small prompts. With
/// `zero_output` the last layer starts at zero.
DenoiserParams init_params(const DenoiserShape& shape, std::uint64_t seed,
                           bool zero_output = false);

Eigen::VectorXd timestep_embedding(double time_value, int dim);

/// Forward pass with an explicit time argument (k for x0, t*K for velocity).
ActionChunk predict_output(const DenoiserParams& params,
                           const ActionChunk& noisy,
                           const ConditioningBundle& cond, double time_value);

ActionChunk predict_x0(const DenoiserParams& params, const ActionChunk& noisy,
                       const ConditioningBundle& cond);

X0Predictor make_x0_predictor(const DenoiserParams& params);

double loss_mse(const DenoiserParams& params, const TrainBatch& batch,
                const NoiseSchedule& schedule, const CovarianceTable& covs,
                std::uint64_t seed, Objective objective = Objective::x0);

/// Same noising discipline as above, any predictor (used with oracle stubs).
double loss_mse(const X0Predictor& predictor, const TrainBatch& batch,
                const NoiseSchedule& schedule, const CovarianceTable& covs,
                std::uint64_t seed);

struct GradOptions {
  Objective objective = Objective::x0;
  bool train_prompts = true;
};

struct LossAndGrad {
  double loss = 0.0;
  DenoiserParams grad;
};

LossAndGrad loss_and_grad(const DenoiserParams& params, const TrainBatch& batch,
                          const NoiseSchedule& schedule,
                          const CovarianceTable& covs, std::uint64_t seed,
                          const GradOptions& options = {});

DenoiserParams grad(const DenoiserParams& params, const TrainBatch& batch,
                    const NoiseSchedule& schedule, const CovarianceTable& covs,
                    std::uint64_t seed, const GradOptions& options = {});

struct AdamWHyper {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct AdamWState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

/// AdamW on a flat parameter vector; decoupled decay p -= lr * wd * p.
void adamw_step(Eigen::Ref<Eigen::VectorXd> params,
                const Eigen::Ref<const Eigen::VectorXd>& grads,
                AdamWState& state, const AdamWHyper& hyper);

void optimizer_step(DenoiserParams& params, const DenoiserParams& grads,
                    AdamWState& state, const AdamWHyper& hyper);

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int iterations = 2000;
  int batch = 32;
  AdamWHyper hyper{1e-3, 0.9, 0.999, 1e-8, 0.05};
  LrSchedule lr_schedule = LrSchedule::constant;  // cosine: decays to 0 at the last iteration
  std::uint64_t seed = 0;
  bool train_prompts = true;
  Objective objective = Objective::x0;
  int log_every = 50;
  int checkpoint_every = 0;
};

struct LossPoint {
  int iteration = 0;
  double loss = 0.0;
};

struct TrainResult {
  DenoiserParams params;
  std::vector<LossPoint> curve;
};

using CheckpointHook = std::function<void(int iteration, const DenoiserParams&)>;

/// Seeded epoch-shuffled minibatch AdamW loop over a pool of samples.
/// Throws std::runtime_error on an empty pool or a non-finite loss.
TrainResult train(const std::vector<TrainSample>& pool,
                  const DenoiserShape& shape, const NoiseSchedule& schedule,
                  const CovarianceTable& covs, const TrainConfig& config,
                  const CheckpointHook& on_checkpoint = {});

/// Checkpoint file: "ckpt_v1" magic, manifest, little-endian float64 payload.
void save_checkpoint(const std::string& path, const DenoiserParams& params);
DenoiserParams load_checkpoint(const std::string& path);

}  // namespace xdiff
