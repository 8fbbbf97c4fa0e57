#include <doctest.h>

#include <cmath>

#include "xdiff/rng.hpp"
#include "xdiff/schedule.hpp"

using namespace xdiff;

namespace {

// Straight-line cosine schedule: f(t) = cos^2(((t/K + s)/(1 + s)) * pi/2).
std::vector<double> oracle_alpha_bars(int K) {
  const double s = 0.008, pi = std::acos(-1.0);
  auto f = [&](double t) {
    const double c = std::cos((t / K + s) / (1 + s) * pi / 2);
    return c * c;
  };
  std::vector<double> out;
  double ab = 1.0;
  for (int k = 1; k <= K; ++k) {
    double b = 1.0 - f(k) / f(k - 1);
    b = std::min(0.999, std::max(1e-5, b));
    ab *= 1.0 - b;
    out.push_back(ab);
  }
  return out;
}

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("cosine schedule matches a direct evaluation") {
  for (int K : {2, 10, 50, 100}) {
    const auto s = build_cosine_schedule(K);
    const auto expected = oracle_alpha_bars(K);
    REQUIRE(s.steps == K);
    for (int k = 1; k <= K; ++k)
      CHECK(s.alpha_bar(k) == doctest::Approx(expected[std::size_t(k - 1)]).epsilon(1e-12));
    CHECK(s.alpha_bar(0) == 1.0);
    for (int k = 1; k <= K; ++k) {
      CHECK(s.beta(k) >= kBetaMin);
      CHECK(s.beta(k) <= kBetaMax);
      CHECK(s.alpha_bar(k) < s.alpha_bar(k - 1));
    }
  }
  CHECK_THROWS_AS(build_cosine_schedule(1), std::invalid_argument);
}

TEST_CASE("float schedule agrees with double") {
  const auto d = build_cosine_schedule<double>(50);
  const auto f = build_cosine_schedule<float>(50);
  for (int k = 1; k <= 50; ++k)
    CHECK(double(f.alpha_bar(k)) == doctest::Approx(d.alpha_bar(k)).epsilon(1e-5));
}

TEST_CASE("EBF scales equal sigma * delta^window") {
  const auto layout = UnifiedActionLayout::reference();
  for (const auto& spec : builtin_embodiments()) {
    for (double delta : {1.0, 0.5, 0.1}) {
      const auto cov = build_ebf_covariance(spec, layout, delta);
      for (int d = 0; d < 12; ++d) {
        double expected = spec.sigma_e;
        for (int i = 0; i < layout.window_of(d); ++i) expected *= delta;
        CHECK(cov.scale[d] == doctest::Approx(expected).epsilon(1e-15));
      }
    }
  }
  const auto step = build_ebf_covariance(builtin_embodiments()[0], layout, 0.9,
                                         PyramidMode::stepwise);
  CHECK(step.scale[11] == doctest::Approx(std::pow(0.9, 11)));
  CHECK_THROWS_AS(build_ebf_covariance(builtin_embodiments()[0], layout, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_ebf_covariance(builtin_embodiments()[0], layout, 1.5),
                  std::invalid_argument);
}

TEST_CASE("delta = 1 and sigma = 1 is isotropic") {
  EmbodimentSpec s = builtin_embodiments()[1];
  s.sigma_e = 1.0;
  const auto cov = build_ebf_covariance(s, UnifiedActionLayout::reference(), 1.0);
  CHECK(cov.scale == isotropic_covariance(12).scale);
}

TEST_CASE("level and shape errors") {
  const auto sched = build_cosine_schedule(10);
  const auto cov = isotropic_covariance(3);
  const ActionChunk x = ActionChunk::Zero(2, 3);
  CHECK_THROWS_AS(forward_step(x, 0, sched, cov, 1), std::out_of_range);
  CHECK_THROWS_AS(forward_marginal(x, 11, sched, cov, 1), std::out_of_range);
  CHECK_THROWS_AS(forward_marginal(ActionChunk::Zero(2, 4), 3, sched, cov, 1),
                  std::invalid_argument);
  ActionChunk bad = x;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(forward_step(bad, 1, sched, cov, 1), std::invalid_argument);
}

TEST_CASE("forward marginal moments follow the closed form") {
  const auto sched = build_cosine_schedule(50);
  const auto cov = build_ebf_covariance(builtin_embodiments()[2],
                                        UnifiedActionLayout::reference(), 0.5);
  ActionChunk clean(1, 12);
  for (int d = 0; d < 12; ++d) clean(0, d) = 0.1 * d - 0.5;
  const int n = 20000;
  for (int k : {1, 25, 50}) {
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(12), sq = Eigen::ArrayXd::Zero(12);
    for (int i = 0; i < n; ++i) {
      const Eigen::ArrayXd x = forward_marginal(clean, k, sched, cov, std::uint64_t(i)).row(0).transpose();
      sum += x;
      sq += x * x;
    }
    const Eigen::ArrayXd mean = sum / n;
    const Eigen::ArrayXd sd = (sq / n - mean * mean).sqrt();
    const double ab = sched.alpha_bar(k);
    for (int d = 0; d < 12; ++d) {
      const double sd_ref = std::sqrt(1 - ab) * cov.scale[d];
      CHECK(std::abs(mean[d] - std::sqrt(ab) * clean(0, d)) < 4 * sd_ref / std::sqrt(n) + 1e-12);
      CHECK(sd[d] == doctest::Approx(sd_ref).epsilon(0.03));
    }
  }
}

TEST_CASE("initial noise has per-dimension std equal to the scale") {
  const auto cov = build_ebf_covariance(builtin_embodiments()[0],
                                        UnifiedActionLayout::reference(), 0.5);
  Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(12);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Eigen::ArrayXd e = ebf_noise(1, cov, std::uint64_t(i)).row(0).transpose();
    sq += e * e;
  }
  for (int d = 0; d < 12; ++d)
    CHECK(std::sqrt(sq[d] / n) == doctest::Approx(cov.scale[d]).epsilon(0.03));
}

TEST_CASE("forward processes are seed-deterministic") {
  const auto sched = build_cosine_schedule(50);
  const auto cov = isotropic_covariance(12);
  const ActionChunk x = ActionChunk::Constant(16, 12, 0.2);
  CHECK(forward_marginal(x, 7, sched, cov, 5) == forward_marginal(x, 7, sched, cov, 5));
  CHECK(forward_step(x, 7, sched, cov, 5) == forward_step(x, 7, sched, cov, 5));
  CHECK(forward_step(x, 7, sched, cov, 5) != forward_step(x, 7, sched, cov, 6));
}

}
