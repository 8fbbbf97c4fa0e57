#include "xdiff/sampler.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "xdiff/rng.hpp"

namespace xdiff {
namespace {

void check_config(const SamplerConfig& config, const NoiseSchedule& schedule) {
  if (config.steps != schedule.steps)
    throw std::invalid_argument("sampler steps " + std::to_string(config.steps) +
                                " differ from schedule steps " +
                                std::to_string(schedule.steps));
  if (config.jumpy_interval < 1 || config.jumpy_interval > config.steps)
    throw std::invalid_argument("jumpy interval must lie in [1, K]");
}

ActionChunk clamp_unit(ActionChunk x) { return x.cwiseMax(-1.0).cwiseMin(1.0); }

}  // namespace

std::uint64_t level_noise_seed(std::uint64_t seed, int k) {
  return mix_seed(seed, 0x1000u + std::uint64_t(k));
}

std::uint64_t init_noise_seed(std::uint64_t seed) { return mix_seed(seed, 0x7fff); }

ActionChunk posterior_step(const ActionChunk& x_from, const ActionChunk& x0_hat,
                           int from, int to, const NoiseSchedule& schedule,
                           const EbfCovariance& cov, std::uint64_t seed) {
  if (to == 0) return x0_hat;
  const double ab_from = schedule.alpha_bar(from);
  const double ab_to = schedule.alpha_bar(to);
  const double alpha = ab_from / ab_to;
  const double beta = 1.0 - alpha;
  const double c_x0 = std::sqrt(ab_to) * beta / (1.0 - ab_from);
  const double c_xt = std::sqrt(alpha) * (1.0 - ab_to) / (1.0 - ab_from);
  const double var = (1.0 - ab_to) / (1.0 - ab_from) * beta;
  Rng rng(level_noise_seed(seed, from));
  ActionChunk eps(x_from.rows(), x_from.cols());
  fill_standard_normal(rng, eps);
  return c_x0 * x0_hat + c_xt * x_from +
         std::sqrt(var) * (eps * cov.scale.asDiagonal());
}

ActionChunk denoise_levels(const X0Predictor& predictor, ActionChunk x,
                           const ConditioningBundle& cond, int from, int to,
                           int interval, const NoiseSchedule& schedule,
                           const EbfCovariance& cov, std::uint64_t seed,
                           const X0Hook& hook) {
  if (interval < 1) throw std::invalid_argument("denoise interval must be >= 1");
  if (from > schedule.steps || to < 0 || to > from)
    throw std::out_of_range("bad denoising level range");
  ConditioningBundle c = cond;
  for (int k = from; k > to;) {
    c.timestep = k;
    ActionChunk x0_hat = clamp_unit(predictor(x, c));
    if (hook) hook(x0_hat, k);
    const int next = std::max(k - interval, to);
    x = posterior_step(x, x0_hat, k, next, schedule, cov, seed);
    k = next;
  }
  return x;
}

ActionChunk sample_full(const X0Predictor& predictor,
                        const ConditioningBundle& cond, int horizon,
                        const NoiseSchedule& schedule, const EbfCovariance& cov,
                        const SamplerConfig& config) {
  check_config(config, schedule);
  ActionChunk x = ebf_noise(horizon, cov, init_noise_seed(config.seed));
  return clamp_unit(denoise_levels(predictor, std::move(x), cond, schedule.steps,
                                   0, 1, schedule, cov, config.seed));
}

ActionChunk sample_jumpy(const X0Predictor& predictor,
                         const ConditioningBundle& cond, int horizon,
                         const NoiseSchedule& schedule, const EbfCovariance& cov,
                         const SamplerConfig& config) {
  check_config(config, schedule);
  ActionChunk x = ebf_noise(horizon, cov, init_noise_seed(config.seed));
  return clamp_unit(denoise_levels(predictor, std::move(x), cond, schedule.steps,
                                   0, config.jumpy_interval, schedule, cov,
                                   config.seed));
}

ActionChunk sample_flow_matching(const VelocityPredictor& velocity,
                                 const ConditioningBundle& cond, int horizon,
                                 const EbfCovariance& cov,
                                 const SamplerConfig& config) {
  if (config.flow_steps < 1) throw std::invalid_argument("flow_steps must be >= 1");
  ActionChunk x = ebf_noise(horizon, cov, init_noise_seed(config.seed));
  const double dt = 1.0 / config.flow_steps;
  for (int i = 0; i < config.flow_steps; ++i) {
    const double t = 1.0 - i * dt;
    x -= dt * velocity(x, t, cond);
  }
  return clamp_unit(std::move(x));
}

void require_finite(const DenoiserParams& params) {
  if (params.size() == 0 || !params.flat().allFinite())
    throw std::runtime_error("denoiser parameters are untrained or non-finite");
}

ActionChunk sample_full(const DenoiserParams& params,
                        const ConditioningBundle& cond,
                        const NoiseSchedule& schedule, const EbfCovariance& cov,
                        const SamplerConfig& config) {
  require_finite(params);
  return sample_full(make_x0_predictor(params), cond, params.shape().horizon,
                     schedule, cov, config);
}

ActionChunk sample_jumpy(const DenoiserParams& params,
                         const ConditioningBundle& cond,
                         const NoiseSchedule& schedule, const EbfCovariance& cov,
                         const SamplerConfig& config) {
  require_finite(params);
  return sample_jumpy(make_x0_predictor(params), cond, params.shape().horizon,
                      schedule, cov, config);
}

ActionChunk sample_flow_matching(const DenoiserParams& fm_params,
                                 const ConditioningBundle& cond,
                                 const EbfCovariance& cov,
                                 const SamplerConfig& config) {
  require_finite(fm_params);
  const double time_scale = config.steps;
  VelocityPredictor v = [&](const ActionChunk& x, double t,
                            const ConditioningBundle& c) {
    return predict_output(fm_params, x, c, t * time_scale);
  };
  return sample_flow_matching(v, cond, fm_params.shape().horizon, cov, config);
}

X0Predictor counting(X0Predictor inner, long& counter) {
  return [inner = std::move(inner), &counter](const ActionChunk& x,
                                             const ConditioningBundle& c) {
    ++counter;
    return inner(x, c);
  };
}

}  // namespace xdiff
