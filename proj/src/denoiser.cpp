#include "xdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "xdiff/rng.hpp"

namespace xdiff {
namespace {

Eigen::Index layer_params(const DenoiserParams& p, int l) {
  return Eigen::Index(p.layer_out(l)) * p.layer_in(l) + p.layer_out(l);
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_cond(const DenoiserShape& shape, const ConditioningBundle& cond) {
  if (cond.proprio.size() != shape.proprio_dim)
    throw std::invalid_argument("proprio length " +
                                std::to_string(cond.proprio.size()) +
                                " != " + std::to_string(shape.proprio_dim));
  if (cond.context.size() != shape.context_dim)
    throw std::invalid_argument("context length " +
                                std::to_string(cond.context.size()) +
                                " != " + std::to_string(shape.context_dim));
  if (cond.embodiment_id < 0 || cond.embodiment_id >= shape.embodiments)
    throw std::invalid_argument("embodiment id " +
                                std::to_string(cond.embodiment_id) +
                                " outside the prompt table");
  if (!cond.proprio.allFinite() || !cond.context.allFinite())
    throw std::invalid_argument("non-finite conditioning input");
}

void check_chunk(const DenoiserShape& shape, const ActionChunk& chunk) {
  if (chunk.rows() != shape.horizon || chunk.cols() != shape.action_dim)
    throw std::invalid_argument(
        "chunk is " + std::to_string(chunk.rows()) + "x" +
        std::to_string(chunk.cols()) + ", expected " +
        std::to_string(shape.horizon) + "x" + std::to_string(shape.action_dim));
  if (!chunk.allFinite())
    throw std::invalid_argument("non-finite noisy chunk");
}

// Column layout: [chunk (row-major) | time embedding | proprio | context |
// prompt row | one-hot id].
void write_features(const DenoiserParams& params, const ActionChunk& noisy,
                    const ConditioningBundle& cond, double time_value,
                    Eigen::Ref<Eigen::VectorXd> out) {
  const DenoiserShape& s = params.shape();
  Eigen::Index at = 0;
  out.segment(at, s.chunk_size()) =
      Eigen::Map<const Eigen::VectorXd>(noisy.data(), s.chunk_size());
  at += s.chunk_size();
  out.segment(at, s.time_embed) = timestep_embedding(time_value, s.time_embed);
  at += s.time_embed;
  out.segment(at, s.proprio_dim) = cond.proprio;
  at += s.proprio_dim;
  out.segment(at, s.context_dim) = cond.context;
  at += s.context_dim;
  out.segment(at, s.prompt_dim) =
      params.prompts().row(cond.embodiment_id).transpose();
  at += s.prompt_dim;
  out.segment(at, s.embodiments).setZero();
  out[at + cond.embodiment_id] = 1.0;
}

Eigen::Index prompt_feature_offset(const DenoiserShape& s) {
  return s.chunk_size() + s.time_embed + s.proprio_dim + s.context_dim;
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> pre;   // Z_l for hidden layers
  std::vector<Eigen::MatrixXd> post;  // A_l, post[0] = input
};

Eigen::MatrixXd forward(const DenoiserParams& params, const Eigen::MatrixXd& x,
                        ForwardCache* cache) {
  const int layers = params.layer_count();
  Eigen::MatrixXd a = x;
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(x);
  }
  for (int l = 0; l < layers; ++l) {
    Eigen::MatrixXd z(params.layer_out(l), a.cols());
    z.noalias() = params.weight(l) * a;
    z.colwise() += params.bias(l);
    if (l == layers - 1) return z;
    a = z.unaryExpr([](double v) { return v * sigmoid(v); });
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
  }
  return a;
}

struct NoisedBatch {
  Eigen::MatrixXd features;
  Eigen::MatrixXd targets;
};

const EbfCovariance& covariance_for(const CovarianceTable& covs, int id) {
  auto it = covs.find(id);
  if (it == covs.end())
    throw std::invalid_argument("no noise covariance registered for embodiment " +
                                std::to_string(id));
  return it->second;
}

// Draws (level, noise) per sample in batch order from one seeded stream.
struct NoiseDraw {
  ActionChunk noisy;
  ActionChunk target;
  double time_value;
  int level;
};

std::vector<NoiseDraw> draw_noise(const TrainBatch& batch,
                                  const NoiseSchedule& schedule,
                                  const CovarianceTable& covs,
                                  std::uint64_t seed, Objective objective) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  Rng rng(seed);
  std::uniform_int_distribution<int> level(1, schedule.steps);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<NoiseDraw> out;
  out.reserve(batch.size());
  for (const TrainSample& sample : batch) {
    const EbfCovariance& cov = covariance_for(covs, sample.cond.embodiment_id);
    ActionChunk eps(sample.clean.rows(), sample.clean.cols());
    if (objective == Objective::x0) {
      const int k = level(rng);
      fill_standard_normal(rng, eps);
      out.push_back({forward_marginal_with_noise(sample.clean, k, schedule, cov, eps),
                     sample.clean, double(k), k});
    } else {
      const double t = unit(rng);
      fill_standard_normal(rng, eps);
      const ActionChunk noise = eps * cov.scale.asDiagonal();
      out.push_back({(1.0 - t) * sample.clean + t * noise, noise - sample.clean,
                     t * schedule.steps, 0});
    }
  }
  return out;
}

NoisedBatch assemble(const DenoiserParams& params, const TrainBatch& batch,
                     const std::vector<NoiseDraw>& draws) {
  const DenoiserShape& s = params.shape();
  NoisedBatch nb;
  nb.features.resize(s.input_dim(), Eigen::Index(batch.size()));
  nb.targets.resize(s.chunk_size(), Eigen::Index(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_chunk(s, batch[i].clean);
    check_cond(s, batch[i].cond);
    write_features(params, draws[i].noisy, batch[i].cond, draws[i].time_value,
                   nb.features.col(Eigen::Index(i)));
    nb.targets.col(Eigen::Index(i)) =
        Eigen::Map<const Eigen::VectorXd>(draws[i].target.data(), s.chunk_size());
  }
  return nb;
}

}  // namespace

DenoiserParams::DenoiserParams(const DenoiserShape& shape)
    : shape_(shape), flat_(Eigen::VectorXd::Zero(parameter_count(shape))) {}

Eigen::Index DenoiserParams::parameter_count(const DenoiserShape& s) {
  if (s.horizon < 1 || s.action_dim < 1 || s.hidden < 1 || s.hidden_layers < 1 ||
      s.embodiments < 1 || s.prompt_dim < 0 || s.time_embed < 2 ||
      s.time_embed % 2 != 0)
    throw std::invalid_argument("invalid denoiser shape");
  Eigen::Index n = 0;
  Eigen::Index in = s.input_dim();
  for (int l = 0; l < s.hidden_layers; ++l) {
    n += Eigen::Index(s.hidden) * in + s.hidden;
    in = s.hidden;
  }
  n += Eigen::Index(s.chunk_size()) * in + s.chunk_size();
  n += Eigen::Index(s.embodiments) * s.prompt_dim;
  return n;
}

int DenoiserParams::layer_in(int l) const {
  return l == 0 ? shape_.input_dim() : shape_.hidden;
}

int DenoiserParams::layer_out(int l) const {
  return l == layer_count() - 1 ? shape_.chunk_size() : shape_.hidden;
}

Eigen::Index DenoiserParams::weight_offset(int l) const {
  Eigen::Index off = 0;
  for (int i = 0; i < l; ++i) off += layer_params(*this, i);
  return off;
}

Eigen::Map<Eigen::MatrixXd> DenoiserParams::weight(int l) {
  return {flat_.data() + weight_offset(l), layer_out(l), layer_in(l)};
}

Eigen::Map<const Eigen::MatrixXd> DenoiserParams::weight(int l) const {
  return {flat_.data() + weight_offset(l), layer_out(l), layer_in(l)};
}

Eigen::Map<Eigen::VectorXd> DenoiserParams::bias(int l) {
  return {flat_.data() + weight_offset(l) + Eigen::Index(layer_out(l)) * layer_in(l),
          layer_out(l)};
}

Eigen::Map<const Eigen::VectorXd> DenoiserParams::bias(int l) const {
  return {flat_.data() + weight_offset(l) + Eigen::Index(layer_out(l)) * layer_in(l),
          layer_out(l)};
}

Eigen::Map<Eigen::MatrixXd> DenoiserParams::prompts() {
  return {flat_.data() + weight_offset(layer_count()), shape_.embodiments,
          shape_.prompt_dim};
}

Eigen::Map<const Eigen::MatrixXd> DenoiserParams::prompts() const {
  return {flat_.data() + weight_offset(layer_count()), shape_.embodiments,
          shape_.prompt_dim};
}

std::vector<DenoiserParams::TensorInfo> DenoiserParams::tensors() const {
  std::vector<TensorInfo> out;
  for (int l = 0; l < layer_count(); ++l) {
    const Eigen::Index off = weight_offset(l);
    out.push_back({"layer" + std::to_string(l) + ".weight", layer_out(l),
                   layer_in(l), off});
    out.push_back({"layer" + std::to_string(l) + ".bias", layer_out(l), 1,
                   off + Eigen::Index(layer_out(l)) * layer_in(l)});
  }
  out.push_back({"soft_prompts", shape_.embodiments, shape_.prompt_dim,
                 weight_offset(layer_count())});
  return out;
}

DenoiserParams init_params(const DenoiserShape& shape, std::uint64_t seed,
                           bool zero_output) {
  DenoiserParams p(shape);
  Rng rng(seed);
  for (int l = 0; l < p.layer_count(); ++l) {
    auto w = p.weight(l);
    const bool last = l == p.layer_count() - 1;
    if (last && zero_output) continue;
    fill_standard_normal(rng, w);
    const double gain = last ? 0.1 : 1.0;
    w *= gain * std::sqrt(1.0 / p.layer_in(l));
  }
  auto prompts = p.prompts();
  fill_standard_normal(rng, prompts);
  prompts *= 0.1;
  return p;
}

Eigen::VectorXd timestep_embedding(double time_value, int dim) {
  const int half = dim / 2;
  Eigen::VectorXd emb(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    emb[i] = std::sin(time_value * freq);
    emb[half + i] = std::cos(time_value * freq);
  }
  return emb;
}

ActionChunk predict_output(const DenoiserParams& params,
                           const ActionChunk& noisy,
                           const ConditioningBundle& cond, double time_value) {
  const DenoiserShape& s = params.shape();
  check_chunk(s, noisy);
  check_cond(s, cond);
  Eigen::MatrixXd x(s.input_dim(), 1);
  write_features(params, noisy, cond, time_value, x.col(0));
  const Eigen::MatrixXd y = forward(params, x, nullptr);
  return Eigen::Map<const ActionChunk>(y.data(), s.horizon, s.action_dim);
}

ActionChunk predict_x0(const DenoiserParams& params, const ActionChunk& noisy,
                       const ConditioningBundle& cond) {
  return predict_output(params, noisy, cond, double(cond.timestep));
}

X0Predictor make_x0_predictor(const DenoiserParams& params) {
  return [&params](const ActionChunk& noisy, const ConditioningBundle& cond) {
    return predict_x0(params, noisy, cond);
  };
}

double loss_mse(const DenoiserParams& params, const TrainBatch& batch,
                const NoiseSchedule& schedule, const CovarianceTable& covs,
                std::uint64_t seed, Objective objective) {
  const auto draws = draw_noise(batch, schedule, covs, seed, objective);
  const NoisedBatch nb = assemble(params, batch, draws);
  const Eigen::MatrixXd y = forward(params, nb.features, nullptr);
  return (y - nb.targets).squaredNorm() / double(y.size());
}

double loss_mse(const X0Predictor& predictor, const TrainBatch& batch,
                const NoiseSchedule& schedule, const CovarianceTable& covs,
                std::uint64_t seed) {
  const auto draws = draw_noise(batch, schedule, covs, seed, Objective::x0);
  double total = 0.0;
  Eigen::Index count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ConditioningBundle cond = batch[i].cond;
    cond.timestep = draws[i].level;
    const ActionChunk pred = predictor(draws[i].noisy, cond);
    total += (pred - batch[i].clean).squaredNorm();
    count += pred.size();
  }
  return total / double(count);
}

LossAndGrad loss_and_grad(const DenoiserParams& params, const TrainBatch& batch,
                          const NoiseSchedule& schedule,
                          const CovarianceTable& covs, std::uint64_t seed,
                          const GradOptions& options) {
  const DenoiserShape& s = params.shape();
  const auto draws = draw_noise(batch, schedule, covs, seed, options.objective);
  const NoisedBatch nb = assemble(params, batch, draws);
  ForwardCache cache;
  const Eigen::MatrixXd y = forward(params, nb.features, &cache);
  const Eigen::MatrixXd resid = y - nb.targets;

  LossAndGrad out{resid.squaredNorm() / double(y.size()), DenoiserParams(s)};
  DenoiserParams& g = out.grad;

  Eigen::MatrixXd delta = (2.0 / double(y.size())) * resid;
  for (int l = params.layer_count() - 1; l >= 0; --l) {
    const Eigen::MatrixXd& input = cache.post[l];
    g.weight(l).noalias() = delta * input.transpose();
    g.bias(l) = delta.rowwise().sum();
    Eigen::MatrixXd back(params.layer_in(l), delta.cols());
    back.noalias() = params.weight(l).transpose() * delta;
    if (l == 0) {
      if (options.train_prompts && s.prompt_dim > 0) {
        const Eigen::Index off = prompt_feature_offset(s);
        auto gp = g.prompts();
        for (std::size_t i = 0; i < batch.size(); ++i)
          gp.row(batch[i].cond.embodiment_id) +=
              back.col(Eigen::Index(i)).segment(off, s.prompt_dim).transpose();
      }
      break;
    }
    const Eigen::MatrixXd& z = cache.pre[l - 1];
    delta = back.cwiseProduct(z.unaryExpr([](double v) {
      const double sg = sigmoid(v);
      return sg * (1.0 + v * (1.0 - sg));
    }));
  }
  return out;
}

DenoiserParams grad(const DenoiserParams& params, const TrainBatch& batch,
                    const NoiseSchedule& schedule, const CovarianceTable& covs,
                    std::uint64_t seed, const GradOptions& options) {
  return loss_and_grad(params, batch, schedule, covs, seed, options).grad;
}

void adamw_step(Eigen::Ref<Eigen::VectorXd> params,
                const Eigen::Ref<const Eigen::VectorXd>& grads,
                AdamWState& state, const AdamWHyper& hyper) {
  if (grads.size() != params.size())
    throw std::invalid_argument("gradient/parameter size mismatch");
  if (!(hyper.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!grads.allFinite())
    throw std::invalid_argument("non-finite gradient entries");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads;
  state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(hyper.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, double(state.step));
  params -= hyper.lr * hyper.weight_decay * params;
  params.array() -= hyper.lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + hyper.eps);
}

void optimizer_step(DenoiserParams& params, const DenoiserParams& grads,
                    AdamWState& state, const AdamWHyper& hyper) {
  if (!(params.shape() == grads.shape()))
    throw std::invalid_argument("gradient shape does not match parameters");
  adamw_step(params.flat(), grads.flat(), state, hyper);
}

TrainResult train(const std::vector<TrainSample>& pool,
                  const DenoiserShape& shape, const NoiseSchedule& schedule,
                  const CovarianceTable& covs, const TrainConfig& config,
                  const CheckpointHook& on_checkpoint) {
  if (pool.empty()) throw std::runtime_error("train: empty dataset");
  if (config.batch < 1 || config.iterations < 0)
    throw std::invalid_argument("train: bad batch/iteration count");

  TrainResult result;
  result.params = init_params(shape, stream_seed(config.seed, "init"));
  if (!config.train_prompts) result.params.prompts().setZero();

  Rng rng(stream_seed(config.seed, "train"));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  AdamWState state;
  TrainBatch batch;
  batch.reserve(std::size_t(config.batch));
  const GradOptions options{config.objective, config.train_prompts};

  for (int it = 1; it <= config.iterations; ++it) {
    batch.clear();
    while (int(batch.size()) < config.batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(pool[order[cursor++]]);
    }
    const std::uint64_t noise_seed = rng();
    LossAndGrad lg =
        loss_and_grad(result.params, batch, schedule, covs, noise_seed, options);
    if (!std::isfinite(lg.loss))
      throw std::runtime_error("train: non-finite loss at iteration " +
                               std::to_string(it));
    AdamWHyper hyper = config.hyper;
    if (config.lr_schedule == LrSchedule::cosine)
      hyper.lr *= 0.5 * (1.0 + std::cos(M_PI * double(it - 1) / config.iterations));
    optimizer_step(result.params, lg.grad, state, hyper);
    if (config.log_every > 0 &&
        (it % config.log_every == 0 || it == 1 || it == config.iterations))
      result.curve.push_back({it, lg.loss});
    if (on_checkpoint && config.checkpoint_every > 0 &&
        it % config.checkpoint_every == 0)
      on_checkpoint(it, result.params);
  }
  return result;
}

}  // namespace xdiff
