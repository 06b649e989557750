#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ppsvae/distributions.hpp"

using namespace ppsvae;

namespace {
const double kInf = std::numeric_limits<double>::infinity();

// Extended-precision oracle for a diagonal Gaussian log-density.
long double gaussian_oracle(const std::vector<double>& x, const std::vector<double>& mu, const std::vector<double>& s) {
  const long double two_pi = 2.0L * 3.14159265358979323846264338327950288L;
  long double total = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double r = (static_cast<long double>(x[i]) - mu[i]) / s[i];
    total += -0.5L * std::log(two_pi * s[i] * s[i]) - 0.5L * r * r;
  }
  return total;
}
}  // namespace

TEST_CASE("sample_gumbel: the Gumbel CDF median is -log(log 2)") {
  Rng rng(11);
  Tensor g = sample_gumbel({100000}, rng);
  std::vector<double> v = g.vec();
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  CHECK(std::abs(v[v.size() / 2] + std::log(std::log(2.0))) < 0.02);
}

TEST_CASE("sample_gumbel: u = 1/e maps to zero") { CHECK(std::abs(gumbel_from_uniform(std::exp(-1.0))) < 1e-15); }

TEST_CASE("sample_gumbel: uniform endpoints are clamped to finite values") {
  CHECK(std::isfinite(gumbel_from_uniform(0.0)));
  CHECK(std::isfinite(gumbel_from_uniform(1.0)));
  CHECK(gumbel_from_uniform(0.0) == doctest::Approx(-std::log(-std::log(kUniformEps))));
}

TEST_CASE("sample_gumbel: deterministic under a seed") {
  Rng a(5), b(5);
  CHECK(sample_gumbel({3, 4}, a) == sample_gumbel({3, 4}, b));
}

TEST_CASE("sample_gumbel: empty shape is a contract violation") {
  Rng rng(0);
  CHECK_THROWS_AS(sample_gumbel({}, rng), ContractViolation);
}

TEST_CASE("gumbel_softmax: hard sample frequencies match softmax within 3 standard errors") {
  const std::vector<double> logits{1.0, 0.0, -1.0};
  const std::vector<double> p = [&] {
    auto ls = log_softmax(logits);
    for (double& v : ls) v = std::exp(v);
    return ls;
  }();
  Rng rng(2024);
  const int n = 100000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) {
    const SimplexVector s = gumbel_softmax_sample(logits, 0.7, rng, true);
    ++counts[s.argmax()];
  }
  for (int k = 0; k < 3; ++k) {
    const double freq = counts[static_cast<std::size_t>(k)] / static_cast<double>(n);
    const double se = std::sqrt(p[static_cast<std::size_t>(k)] * (1 - p[static_cast<std::size_t>(k)]) / n);
    CHECK(std::abs(freq - p[static_cast<std::size_t>(k)]) < 3 * se);
  }
}

TEST_CASE("gumbel_softmax: equal logits with zero noise give the uniform vector") {
  const std::vector<double> logits(4, 0.3), noise(4, 0.0);
  const SimplexVector s = gumbel_softmax(logits, noise, 1.0, false);
  for (double p : s.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("gumbel_softmax: dominant logit at low temperature") {
  const std::vector<double> logits{10.0, 0.0, 0.0}, noise(3, 0.0);
  CHECK(gumbel_softmax(logits, noise, 0.1, false).probs[0] > 1.0 - 1e-10);
}

TEST_CASE("gumbel_softmax: hard output is exactly one-hot at the soft argmax") {
  Rng rng(3);
  const std::vector<double> logits{0.2, 1.5, -0.4, 0.9};
  for (int i = 0; i < 50; ++i) {
    Rng copy = rng;
    const SimplexVector soft = gumbel_softmax_sample(logits, 0.5, copy, false);
    const SimplexVector hard = gumbel_softmax_sample(logits, 0.5, rng, true);
    CHECK(hard.argmax() == soft.argmax());
    CHECK(std::count(hard.probs.begin(), hard.probs.end(), 1.0) == 1);
    CHECK(std::count(hard.probs.begin(), hard.probs.end(), 0.0) == 3);
  }
}

TEST_CASE("gumbel_softmax: soft samples are simplex vectors") {
  Rng rng(8);
  std::vector<double> logits(16);
  for (int trial = 0; trial < 200; ++trial) {
    for (double& l : logits) l = std::normal_distribution<double>(0.0, 3.0)(rng);
    const SimplexVector s = gumbel_softmax_sample(logits, 0.3 + trial * 0.01, rng, false);
    CHECK_NOTHROW(s.validate(1e-6));
  }
}

TEST_CASE("gumbel_softmax: relaxed samples approach one-hot as tau goes to zero") {
  const std::vector<double> logits{3.0, 2.0, 0.5, -1.0};
  Rng rng(19);
  for (int i = 0; i < 100; ++i) {
    const SimplexVector s = gumbel_softmax_sample(logits, 1e-3, rng, false);
    CHECK(*std::max_element(s.probs.begin(), s.probs.end()) >= 0.999);
  }
}

TEST_CASE("gumbel_softmax: non-positive temperature is a contract violation") {
  Rng rng(0);
  const std::vector<double> logits{0.0, 1.0};
  CHECK_THROWS_AS(gumbel_softmax_sample(logits, 0.0, rng, true), ContractViolation);
  CHECK_THROWS_AS(gumbel_softmax_sample(logits, -1.0, rng, false), ContractViolation);
}

TEST_CASE("gumbel_softmax: deterministic under a seed") {
  Rng a(77), b(77);
  const std::vector<double> logits{0.0, 1.0, 2.0};
  for (int i = 0; i < 10; ++i)
    CHECK(gumbel_softmax_sample(logits, 0.5, a, false).probs == gumbel_softmax_sample(logits, 0.5, b, false).probs);
}

TEST_CASE("categorical_log_prob: uniform logits over four categories") {
  const std::vector<double> logits(4, 1.7), onehot{0, 0, 1, 0};
  CHECK(categorical_log_prob(onehot, logits) == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK(categorical_log_prob(onehot, logits) == doctest::Approx(-1.3863).epsilon(1e-4));
}

TEST_CASE("categorical_log_prob: certain event") {
  const std::vector<double> logits{0.0, -kInf, -kInf}, onehot{1, 0, 0};
  CHECK(categorical_log_prob(onehot, logits) == 0.0);
}

TEST_CASE("categorical_log_prob: probabilities over all hot indices sum to one") {
  Rng rng(4);
  std::normal_distribution<double> n(0.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(37);
    for (double& l : logits) l = n(rng);
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      std::vector<double> onehot(logits.size(), 0.0);
      onehot[k] = 1.0;
      total += std::exp(categorical_log_prob(onehot, logits));
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("categorical_log_prob: malformed one-hots are contract violations") {
  const std::vector<double> logits{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(categorical_log_prob(std::vector<double>{1, 1, 0}, logits), ContractViolation);
  CHECK_THROWS_AS(categorical_log_prob(std::vector<double>{0, 0, 0}, logits), ContractViolation);
  CHECK_THROWS_AS(categorical_log_prob(std::vector<double>{0.5, 0.5, 0}, logits), ContractViolation);
  CHECK_THROWS_AS(categorical_log_prob(std::vector<double>{1, 0}, logits), ContractViolation);
}

TEST_CASE("diag_gaussian_log_prob: standard normal at zero") {
  const DiagGaussianParams p({0.0}, {1.0});
  CHECK(diag_gaussian_log_prob(std::vector<double>{0.0}, p) == doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-14));
  CHECK(diag_gaussian_log_prob(std::vector<double>{0.0}, p) == doctest::Approx(-0.9189).epsilon(1e-4));
}

TEST_CASE("diag_gaussian_log_prob: zero residual leaves the normalizer") {
  const std::vector<double> mu{0.3, -2.0, 5.0}, s{0.1, 2.0, 0.7};
  double expect = 0.0;
  for (double v : s) expect -= 0.5 * std::log(2 * M_PI * v * v);
  CHECK(diag_gaussian_log_prob(mu, DiagGaussianParams(mu, s)) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("diag_gaussian_log_prob: matches an extended-precision oracle") {
  Rng rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(3), mu(3), s(3);
    for (int i = 0; i < 3; ++i) {
      x[static_cast<std::size_t>(i)] = n(rng);
      mu[static_cast<std::size_t>(i)] = n(rng);
      s[static_cast<std::size_t>(i)] = u(rng);
    }
    const double got = diag_gaussian_log_prob(x, DiagGaussianParams(mu, s));
    CHECK(std::abs(got - static_cast<double>(gaussian_oracle(x, mu, s))) < 1e-8);
  }
}

TEST_CASE("diag_gaussian_log_prob: shape mismatch is a contract violation") {
  const DiagGaussianParams p({0.0, 0.0}, {1.0, 1.0});
  CHECK_THROWS_AS(diag_gaussian_log_prob(std::vector<double>{0.0}, p), ContractViolation);
  CHECK_THROWS_AS(DiagGaussianParams({0.0, 0.0}, {1.0}), ContractViolation);
}

TEST_CASE("gaussian_kl_std_normal: closed-form cases") {
  CHECK(gaussian_kl_std_normal(DiagGaussianParams(std::vector<double>(7, 0.0), std::vector<double>(7, 1.0))) == 0.0);
  CHECK(gaussian_kl_std_normal(DiagGaussianParams({1.0}, {1.0})) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gaussian_kl_std_normal: matches a 10^6-sample Monte Carlo estimate within 1%") {
  Rng rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.3, 1.8);
  std::vector<double> mu(8), s(8);
  for (int d = 0; d < 8; ++d) {
    mu[static_cast<std::size_t>(d)] = n(rng);
    s[static_cast<std::size_t>(d)] = u(rng);
  }
  const DiagGaussianParams q(mu, s);
  const DiagGaussianParams prior(std::vector<double>(8, 0.0), std::vector<double>(8, 1.0));
  const int samples = 1000000;
  double total = 0.0;
  for (int i = 0; i < samples; ++i) {
    const auto x = reparam_gaussian_sample(q, rng);
    total += diag_gaussian_log_prob(x, q) - diag_gaussian_log_prob(x, prior);
  }
  const double kl = gaussian_kl_std_normal(q);
  CHECK(std::abs(total / samples - kl) / kl < 0.01);
}

TEST_CASE("gaussian_kl_std_normal: nonnegative over random parameters") {
  Rng rng(6);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> u(1e-3, 5.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> mu(5), s(5);
    for (int d = 0; d < 5; ++d) {
      mu[static_cast<std::size_t>(d)] = n(rng);
      s[static_cast<std::size_t>(d)] = u(rng);
    }
    CHECK(gaussian_kl_std_normal(DiagGaussianParams(mu, s)) >= 0.0);
  }
}

TEST_CASE("gaussian_kl_std_normal: non-positive scale is a contract violation") {
  DiagGaussianParams p;
  p.mean = {0.0};
  p.scale = {0.0};
  CHECK_THROWS_AS(gaussian_kl_std_normal(p), ContractViolation);
}

TEST_CASE("reparam_gaussian_sample: floor scale pins the sample at the mean") {
  Rng rng(1);
  const DiagGaussianParams p({0.5, -1.0}, {kScaleFloor, kScaleFloor});
  for (int i = 0; i < 100; ++i) {
    const auto x = reparam_gaussian_sample(p, rng);
    CHECK(std::abs(x[0] - 0.5) < 6 * kScaleFloor);
    CHECK(std::abs(x[1] + 1.0) < 6 * kScaleFloor);
  }
}

TEST_CASE("reparam_gaussian_sample: reproducible and centered") {
  Rng a(12), b(12);
  const DiagGaussianParams p({2.0}, {0.5});
  CHECK(reparam_gaussian_sample(p, a) == reparam_gaussian_sample(p, b));
  const int n = 100000;
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += reparam_gaussian_sample(p, a)[0];
  mean /= n;
  CHECK(std::abs(mean - 2.0) < 3 * 0.5 / std::sqrt(n));
}

TEST_CASE("log_mean_exp: analytic and stability cases") {
  CHECK(log_mean_exp(std::vector<double>(5, -3.25)) == -3.25);
  CHECK(log_mean_exp(std::vector<double>{0.0, std::log(3.0)}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(log_mean_exp(std::vector<double>{1000.0, 1000.0, 1000.0}) == 1000.0);
  CHECK(std::isfinite(log_mean_exp(std::vector<double>{-1000.0, -1001.0})));
  CHECK_THROWS_AS(log_mean_exp(std::vector<double>{}), ContractViolation);
}

TEST_CASE("scale link: softplus plus floor, and its inverse") {
  CHECK(scale_from_raw(-50.0) >= kScaleFloor);
  CHECK(scale_from_raw(0.0) == doctest::Approx(std::log(2.0) + kScaleFloor));
  for (double s : {0.001, 0.5, 1.0, 7.0}) CHECK(scale_from_raw(raw_from_scale(s)) == doctest::Approx(s).epsilon(1e-12));
  CHECK(std::isfinite(softplus(800.0)));
}
