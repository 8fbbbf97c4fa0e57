#pragma once

#include <cstdint>
#include <functional>

#include "xdiff/denoiser.hpp"
#include "xdiff/schedule.hpp"

namespace xdiff {

enum class SamplerMode { diffusion, flow_matching };

struct SamplerConfig {
  int steps = 50;           // K, must match the trained schedule
  int jumpy_interval = 10;  // J
  SamplerMode mode = SamplerMode::diffusion;
  std::uint64_t seed = 0;
  int flow_steps = 10;
};

using VelocityPredictor = std::function<ActionChunk(
    const ActionChunk& x_t, double t, const ConditioningBundle& cond)>;

/// Called on every x0 estimate before it is used, with the level it came from.
using X0Hook = std::function<void(ActionChunk& x0_hat, int level)>;

/// Noise for the step that leaves level k depends only on (seed, k), so any
/// two samplers walking the same levels with the same seed draw identical noise.
std::uint64_t level_noise_seed(std::uint64_t seed, int k);
std::uint64_t init_noise_seed(std::uint64_t seed);

/// Draw from q(x^{to} | x^{from}, x0_hat) for the diagonal EBF process
/// (to < from). With to == from - 1 this is the usual DDPM posterior with
/// variance beta_tilde * scale^2; to == 0 returns x0_hat.
ActionChunk posterior_step(const ActionChunk& x_from, const ActionChunk& x0_hat,
                           int from, int to, const NoiseSchedule& schedule,
                           const EbfCovariance& cov, std::uint64_t seed);

/// Reverse process from level `from` to `to`, evaluating the predictor at
/// from, from - interval, ... (> to). Returns the chunk at level `to`.
ActionChunk denoise_levels(const X0Predictor& predictor, ActionChunk x,
                           const ConditioningBundle& cond, int from, int to,
                           int interval, const NoiseSchedule& schedule,
                           const EbfCovariance& cov, std::uint64_t seed,
                           const X0Hook& hook = {});

/// K network evaluations; output clamped to [-1, 1].
ActionChunk sample_full(const X0Predictor& predictor,
                        const ConditioningBundle& cond, int horizon,
                        const NoiseSchedule& schedule, const EbfCovariance& cov,
                        const SamplerConfig& config);

/// ceil(K / J) network evaluations; J == 1 reproduces sample_full exactly.
ActionChunk sample_jumpy(const X0Predictor& predictor,
                         const ConditioningBundle& cond, int horizon,
                         const NoiseSchedule& schedule, const EbfCovariance& cov,
                         const SamplerConfig& config);

/// Explicit Euler from t = 1 (EBF noise) to t = 0 in config.flow_steps steps.
ActionChunk sample_flow_matching(const VelocityPredictor& velocity,
                                 const ConditioningBundle& cond, int horizon,
                                 const EbfCovariance& cov,
                                 const SamplerConfig& config);

ActionChunk sample_full(const DenoiserParams& params,
                        const ConditioningBundle& cond,
                        const NoiseSchedule& schedule, const EbfCovariance& cov,
                        const SamplerConfig& config);

ActionChunk sample_jumpy(const DenoiserParams& params,
                         const ConditioningBundle& cond,
                         const NoiseSchedule& schedule, const EbfCovariance& cov,
                         const SamplerConfig& config);

/// `fm_params` trained with Objective::velocity.
ActionChunk sample_flow_matching(const DenoiserParams& fm_params,
                                 const ConditioningBundle& cond,
                                 const EbfCovariance& cov,
                                 const SamplerConfig& config);

/// Wraps a predictor so every call increments `counter`.
X0Predictor counting(X0Predictor inner, long& counter);

/// Throws std::runtime_error if any parameter is NaN or infinite.
void require_finite(const DenoiserParams& params);

}  // namespace xdiff
