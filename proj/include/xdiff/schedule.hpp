#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include <Eigen/Core>

#include "xdiff/embodiment.hpp"

namespace xdiff {

inline constexpr double kBetaMin = 1e-5;
inline constexpr double kBetaMax = 0.999;

/// Discrete noise schedule indexed by k = 1..K; alpha_bar(0) == 1.
template <typename Scalar>
struct NoiseScheduleT {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  int steps = 0;
  Vector betas;       // betas[k-1] = beta_k
  Vector alpha_bars;  // alpha_bars[k-1] = prod_{i<=k} (1 - beta_i)

  Scalar beta(int k) const { return betas[k - 1]; }
  Scalar alpha_bar(int k) const { return k == 0 ? Scalar(1) : alpha_bars[k - 1]; }
  Scalar snr(int k) const {
    return std::sqrt(alpha_bar(k)) / std::sqrt(Scalar(1) - alpha_bar(k));
  }
};

using NoiseSchedule = NoiseScheduleT<double>;

template <typename Scalar = double>
NoiseScheduleT<Scalar> schedule_from_betas(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& betas) {
  NoiseScheduleT<Scalar> s;
  s.steps = static_cast<int>(betas.size());
  s.betas = betas;
  s.alpha_bars.resize(s.steps);
  Scalar running = 1;
  for (int k = 0; k < s.steps; ++k) {
    running *= Scalar(1) - betas[k];
    s.alpha_bars[k] = running;
  }
  return s;
}

/// Cosine alpha-bar parameterisation (offset s = 0.008) with betas clipped to
/// [kBetaMin, kBetaMax].
template <typename Scalar = double>
NoiseScheduleT<Scalar> build_cosine_schedule(int steps) {
  if (steps < 2)
    throw std::invalid_argument("cosine schedule needs at least 2 steps");
  const Scalar offset = Scalar(0.008);
  const Scalar half_pi = Scalar(M_PI / 2);
  auto f = [&](Scalar t) {
    const Scalar c = std::cos((t / steps + offset) / (1 + offset) * half_pi);
    return c * c;
  };
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> betas(steps);
  for (int k = 1; k <= steps; ++k) {
    const Scalar b = 1 - f(Scalar(k)) / f(Scalar(k - 1));
    betas[k - 1] = std::clamp(b, Scalar(kBetaMin), Scalar(kBetaMax));
  }
  return schedule_from_betas<Scalar>(betas);
}

/// Linear betas from beta_start to beta_end.
template <typename Scalar = double>
NoiseScheduleT<Scalar> build_linear_schedule(int steps, Scalar beta_start,
                                             Scalar beta_end) {
  if (steps < 2)
    throw std::invalid_argument("linear schedule needs at least 2 steps");
  return schedule_from_betas<Scalar>(
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::LinSpaced(steps, beta_start,
                                                          beta_end));
}

enum class PyramidMode { window, stepwise };

/// Diagonal noise scales: scale[d] = sigma_e * delta^window(d) (window mode)
/// or sigma_e * delta^d (stepwise mode).
struct EbfCovariance {
  Eigen::VectorXd scale;
  double delta = 1.0;
};

EbfCovariance build_ebf_covariance(const EmbodimentSpec& spec,
                                   const UnifiedActionLayout& layout,
                                   double delta,
                                   PyramidMode mode = PyramidMode::window);

/// sigma_e = 1, delta = 1: plain isotropic diffusion.
EbfCovariance isotropic_covariance(int dim);

/// One Markov step q(x^k | x^{k-1}) with EBF-scaled noise.
ActionChunk forward_step(const ActionChunk& prev, int k,
                         const NoiseSchedule& schedule,
                         const EbfCovariance& cov, std::uint64_t seed);

/// Closed-form q(x^k | x^0) for the diagonal EBF process.
ActionChunk forward_marginal(const ActionChunk& clean, int k,
                             const NoiseSchedule& schedule,
                             const EbfCovariance& cov, std::uint64_t seed);

/// As forward_marginal with caller-supplied standard-normal noise.
ActionChunk forward_marginal_with_noise(const ActionChunk& clean, int k,
                                        const NoiseSchedule& schedule,
                                        const EbfCovariance& cov,
                                        const ActionChunk& eps);

/// EBF-scaled white noise, the initial state of every reverse process.
ActionChunk ebf_noise(int horizon, const EbfCovariance& cov, std::uint64_t seed);

}  // namespace xdiff
