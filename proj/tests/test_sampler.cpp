#include <doctest.h>

#include <cmath>

#include "xdiff/rng.hpp"
#include "xdiff/sampler.hpp"

using namespace xdiff;

namespace {

ConditioningBundle empty_cond() {
  return {Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(8), 1, 0};
}

// Posterior mean of a N(0, s^2) prior per dim: a smooth, non-trivial x0 model.
X0Predictor gaussian_prior_predictor(const NoiseSchedule& sched,
                                     const EbfCovariance& cov, double s) {
  return [&sched, &cov, s](const ActionChunk& x, const ConditioningBundle& c) {
    const double ab = sched.alpha_bar(c.timestep);
    ActionChunk out(x.rows(), x.cols());
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      const double n2 = (1 - ab) * cov.scale[d] * cov.scale[d];
      out.col(d) = std::sqrt(ab) * s * s / (ab * s * s + n2) * x.col(d);
    }
    return out;
  };
}

// Straight-line ancestral DDPM with the same noise streams as the library.
ActionChunk reference_ddpm(const X0Predictor& f, const NoiseSchedule& sched,
                           const EbfCovariance& cov, int H, std::uint64_t seed) {
  const int D = int(cov.scale.size());
  Rng init(init_noise_seed(seed));
  std::normal_distribution<double> n0(0, 1);
  ActionChunk x(H, D);
  for (int h = 0; h < H; ++h)
    for (int d = 0; d < D; ++d) x(h, d) = n0(init) * cov.scale[d];
  for (int k = sched.steps; k >= 1; --k) {
    ConditioningBundle c = empty_cond();
    c.timestep = k;
    ActionChunk x0 = f(x, c).cwiseMax(-1.0).cwiseMin(1.0);
    if (k == 1) {
      x = x0;
      break;
    }
    const double ab = sched.alpha_bar(k), ab_prev = sched.alpha_bar(k - 1);
    const double beta = 1 - ab / ab_prev;
    Rng rng(level_noise_seed(seed, k));
    std::normal_distribution<double> n(0, 1);
    ActionChunk next(H, D);
    for (int h = 0; h < H; ++h)
      for (int d = 0; d < D; ++d) {
        const double eps = n(rng);
        const double mean = std::sqrt(ab_prev) * beta / (1 - ab) * x0(h, d) +
                            std::sqrt(1 - beta) * (1 - ab_prev) / (1 - ab) * x(h, d);
        const double var = (1 - ab_prev) / (1 - ab) * beta;
        next(h, d) = mean + std::sqrt(var) * cov.scale[d] * eps;
      }
    x = next;
  }
  return x.cwiseMax(-1.0).cwiseMin(1.0);
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("full sampling equals a straight-line DDPM re-implementation") {
  const auto sched = build_cosine_schedule(50);
  const auto cov = build_ebf_covariance(builtin_embodiments()[1],
                                        UnifiedActionLayout::reference(), 0.5);
  const auto f = gaussian_prior_predictor(sched, cov, 0.4);
  for (std::uint64_t seed : {0u, 1u, 77u}) {
    SamplerConfig cfg;
    cfg.seed = seed;
    const ActionChunk a = sample_full(f, empty_cond(), 4, sched, cov, cfg);
    const ActionChunk b = reference_ddpm(f, sched, cov, 4, seed);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("constant predictor is a fixed point") {
  const auto sched = build_cosine_schedule(50);
  const auto cov = isotropic_covariance(12);
  const ActionChunk target = ActionChunk::Constant(16, 12, 0.3);
  X0Predictor f = [&](const ActionChunk&, const ConditioningBundle&) { return target; };
  SamplerConfig cfg;
  CHECK(sample_full(f, empty_cond(), 16, sched, cov, cfg) == target);
  cfg.jumpy_interval = 7;
  CHECK(sample_jumpy(f, empty_cond(), 16, sched, cov, cfg) == target);
}

TEST_CASE("jumpy interval 1 is bit-identical to full sampling") {
  const auto sched = build_cosine_schedule(50);
  const auto cov = build_ebf_covariance(builtin_embodiments()[2],
                                        UnifiedActionLayout::reference(), 0.5);
  const auto f = gaussian_prior_predictor(sched, cov, 0.6);
  SamplerConfig cfg;
  cfg.jumpy_interval = 1;
  cfg.seed = 9;
  CHECK(sample_jumpy(f, empty_cond(), 16, sched, cov, cfg) ==
        sample_full(f, empty_cond(), 16, sched, cov, cfg));
}

TEST_CASE("evaluation count is ceil(K / J)") {
  const auto cov = isotropic_covariance(12);
  for (int K : {10, 50, 51}) {
    const auto sched = build_cosine_schedule(K);
    const auto inner = gaussian_prior_predictor(sched, cov, 0.5);
    for (int J = 1; J <= K; J += 3) {
      long calls = 0;
      SamplerConfig cfg;
      cfg.steps = K;
      cfg.jumpy_interval = J;
      sample_jumpy(counting(inner, calls), empty_cond(), 16, sched, cov, cfg);
      CHECK(calls == (K + J - 1) / J);
    }
  }
}

TEST_CASE("config errors") {
  const auto sched = build_cosine_schedule(50);
  const auto cov = isotropic_covariance(12);
  const auto f = gaussian_prior_predictor(sched, cov, 0.5);
  SamplerConfig cfg;
  cfg.steps = 40;
  CHECK_THROWS_AS(sample_full(f, empty_cond(), 16, sched, cov, cfg), std::invalid_argument);
  cfg.steps = 50;
  cfg.jumpy_interval = 0;
  CHECK_THROWS_AS(sample_jumpy(f, empty_cond(), 16, sched, cov, cfg), std::invalid_argument);
  DenoiserParams untrained;
  CHECK_THROWS_AS(sample_full(untrained, empty_cond(), sched, cov, SamplerConfig{}),
                  std::runtime_error);
}

TEST_CASE("outputs are bounded and seed-deterministic") {
  const auto sched = build_cosine_schedule(50);
  const auto cov = isotropic_covariance(12);
  X0Predictor wild = [](const ActionChunk& x, const ConditioningBundle&) {
    return ActionChunk(5.0 * x);
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SamplerConfig cfg;
    cfg.seed = seed;
    const ActionChunk a = sample_full(wild, empty_cond(), 16, sched, cov, cfg);
    CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
    CHECK(a == sample_full(wild, empty_cond(), 16, sched, cov, cfg));
    cfg.jumpy_interval = 10;
    CHECK(sample_jumpy(wild, empty_cond(), 16, sched, cov, cfg).cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("network sampler is deterministic") {
  DenoiserShape s;
  s.hidden = 16;
  s.hidden_layers = 1;
  const DenoiserParams p = init_params(s, 3);
  const auto sched = build_cosine_schedule(50);
  const auto cov = isotropic_covariance(12);
  SamplerConfig cfg;
  cfg.seed = 4;
  CHECK(sample_full(p, empty_cond(), sched, cov, cfg) ==
        sample_full(p, empty_cond(), sched, cov, cfg));
}

TEST_CASE("flow matching Euler integration") {
  const auto cov = isotropic_covariance(12);
  SamplerConfig cfg;
  cfg.seed = 2;
  const ActionChunk x1 = ebf_noise(16, cov, init_noise_seed(cfg.seed));

  // Constant field: x0 = x1 - v exactly.
  const ActionChunk v = ActionChunk::Constant(16, 12, 0.25);
  VelocityPredictor constant = [&](const ActionChunk&, double, const ConditioningBundle&) {
    return v;
  };
  const ActionChunk expected = (x1 - v).cwiseMax(-1.0).cwiseMin(1.0);
  CHECK((sample_flow_matching(constant, empty_cond(), 16, cov, cfg) - expected)
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  // Exact straight-path field toward a fixed point c: v = (x - c) / t.
  const ActionChunk c = ActionChunk::Constant(16, 12, -0.4);
  VelocityPredictor straight = [&](const ActionChunk& x, double t, const ConditioningBundle&) {
    return ActionChunk((x - c) / t);
  };
  CHECK((sample_flow_matching(straight, empty_cond(), 16, cov, cfg) - c).cwiseAbs().maxCoeff() <
        1e-12);

  int calls = 0;
  VelocityPredictor counted = [&](const ActionChunk& x, double, const ConditioningBundle&) {
    ++calls;
    return ActionChunk(ActionChunk::Zero(x.rows(), x.cols()));
  };
  sample_flow_matching(counted, empty_cond(), 16, cov, cfg);
  CHECK(calls == 10);
}

}
