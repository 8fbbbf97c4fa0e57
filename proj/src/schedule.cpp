#include "xdiff/schedule.hpp"

#include <string>

#include "xdiff/rng.hpp"

namespace xdiff {
namespace {

void check_level(int k, const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.steps)
    throw std::out_of_range("diffusion level " + std::to_string(k) +
                            " outside [1, " + std::to_string(schedule.steps) +
                            "]");
}

void check_shape(const ActionChunk& chunk, const EbfCovariance& cov) {
  if (chunk.cols() != cov.scale.size())
    throw std::invalid_argument("chunk width does not match covariance dim");
  if (!chunk.allFinite())
    throw std::invalid_argument("chunk has non-finite entries");
}

ActionChunk scaled_noise(Eigen::Index rows, const EbfCovariance& cov,
                         std::uint64_t seed) {
  Rng rng(seed);
  ActionChunk eps(rows, cov.scale.size());
  fill_standard_normal(rng, eps);
  return eps * cov.scale.asDiagonal();
}

}  // namespace

EbfCovariance build_ebf_covariance(const EmbodimentSpec& spec,
                                   const UnifiedActionLayout& layout,
                                   double delta, PyramidMode mode) {
  if (!(delta > 0.0 && delta <= 1.0))
    throw std::invalid_argument("EBF delta must lie in (0, 1], got " +
                                std::to_string(delta));
  validate(spec, layout);
  EbfCovariance cov;
  cov.delta = delta;
  cov.scale.resize(layout.total_dim());
  for (int d = 0; d < layout.total_dim(); ++d) {
    const int power = mode == PyramidMode::window ? layout.window_of(d) : d;
    cov.scale[d] = spec.sigma_e * std::pow(delta, power);
  }
  return cov;
}

EbfCovariance isotropic_covariance(int dim) {
  return {Eigen::VectorXd::Ones(dim), 1.0};
}

ActionChunk forward_step(const ActionChunk& prev, int k,
                         const NoiseSchedule& schedule,
                         const EbfCovariance& cov, std::uint64_t seed) {
  check_level(k, schedule);
  check_shape(prev, cov);
  const double beta = schedule.beta(k);
  return std::sqrt(1.0 - beta) * prev +
         std::sqrt(beta) * scaled_noise(prev.rows(), cov, seed);
}

ActionChunk forward_marginal_with_noise(const ActionChunk& clean, int k,
                                        const NoiseSchedule& schedule,
                                        const EbfCovariance& cov,
                                        const ActionChunk& eps) {
  check_level(k, schedule);
  check_shape(clean, cov);
  const double ab = schedule.alpha_bar(k);
  return std::sqrt(ab) * clean +
         std::sqrt(1.0 - ab) * (eps * cov.scale.asDiagonal());
}

ActionChunk forward_marginal(const ActionChunk& clean, int k,
                             const NoiseSchedule& schedule,
                             const EbfCovariance& cov, std::uint64_t seed) {
  Rng rng(seed);
  ActionChunk eps(clean.rows(), clean.cols());
  fill_standard_normal(rng, eps);
  return forward_marginal_with_noise(clean, k, schedule, cov, eps);
}

ActionChunk ebf_noise(int horizon, const EbfCovariance& cov,
                      std::uint64_t seed) {
  return scaled_noise(horizon, cov, seed);
}

}  // namespace xdiff
