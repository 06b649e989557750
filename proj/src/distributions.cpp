#include "ppsvae/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace ppsvae {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double scale_from_raw(double raw) { return softplus(raw) + kScaleFloor; }

double raw_from_scale(double scale) {
  require(scale > kScaleFloor, "raw_from_scale needs scale above the floor");
  const double s = scale - kScaleFloor;
  // softplus^{-1}(s) = log(expm1(s)), written to stay accurate for large s.
  return s > 30.0 ? s : std::log(std::expm1(s));
}

std::size_t SimplexVector::argmax() const {
  require(!probs.empty(), "argmax of empty simplex vector");
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

void SimplexVector::validate(double tol) const {
  require(!probs.empty(), "simplex vector must be nonempty");
  double total = 0.0;
  for (double p : probs) {
    require(p >= 0.0 && std::isfinite(p), "simplex vector has a negative or non-finite entry");
    total += p;
  }
  require(std::abs(total - 1.0) <= tol, "simplex vector does not sum to one");
}

DiagGaussianParams::DiagGaussianParams(std::vector<double> m, std::vector<double> s)
    : mean(std::move(m)), scale(std::move(s)) {
  require(mean.size() == scale.size(), "gaussian mean/scale size mismatch");
  for (double v : scale) require(v > 0.0, "gaussian scale must be positive");
}

double gumbel_from_uniform(double u) {
  u = std::clamp(u, kUniformEps, 1.0 - kUniformEps);
  return -std::log(-std::log(u));
}

Tensor sample_gumbel(const Shape& shape, Rng& rng) {
  require(!shape.empty(), "sample_gumbel needs a nonempty shape");
  Tensor out(shape);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (double& v : out.span()) v = gumbel_from_uniform(uniform(rng));
  return out;
}

SimplexVector gumbel_softmax(std::span<const double> logits, std::span<const double> noise, double temperature,
                             bool hard) {
  require(temperature > 0.0, "gumbel_softmax temperature must be positive");
  require(!logits.empty() && logits.size() == noise.size(), "gumbel_softmax logits/noise size mismatch");
  const std::size_t k = logits.size();
  std::vector<double> z(k);
  for (std::size_t i = 0; i < k; ++i) z[i] = (logits[i] + noise[i]) / temperature;
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& v : z) total += (v = std::exp(v - m));
  for (double& v : z) v /= total;
  SimplexVector out{std::move(z)};
  if (hard) {
    const std::size_t hot = out.argmax();
    std::fill(out.probs.begin(), out.probs.end(), 0.0);
    out.probs[hot] = 1.0;
  }
  return out;
}

SimplexVector gumbel_softmax_sample(std::span<const double> logits, double temperature, Rng& rng, bool hard) {
  require(temperature > 0.0, "gumbel_softmax temperature must be positive");
  require(!logits.empty(), "gumbel_softmax needs K >= 1");
  const Tensor noise = sample_gumbel({static_cast<int>(logits.size())}, rng);
  return gumbel_softmax(logits, noise.span(), temperature, hard);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  require(!logits.empty(), "log_softmax of empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - m);
  const double lse = m + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double categorical_log_prob(std::span<const double> one_hot, std::span<const double> logits) {
  require(one_hot.size() == logits.size() && !logits.empty(), "categorical_log_prob size mismatch");
  std::size_t hot = one_hot.size();
  for (std::size_t i = 0; i < one_hot.size(); ++i) {
    if (one_hot[i] == 1.0) {
      require(hot == one_hot.size(), "one-hot vector has more than one hot entry");
      hot = i;
    } else {
      require(one_hot[i] == 0.0, "one-hot vector has a non-binary entry");
    }
  }
  require(hot < one_hot.size(), "one-hot vector has no hot entry");
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - m);
  return logits[hot] - m - std::log(total);
}

double diag_gaussian_log_prob(std::span<const double> x, const DiagGaussianParams& params) {
  require(x.size() == params.mean.size() && x.size() == params.scale.size(), "gaussian log_prob shape mismatch");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - params.mean[i]) / params.scale[i];
    total += -half_log_2pi - std::log(params.scale[i]) - 0.5 * z * z;
  }
  return total;
}

double gaussian_kl_std_normal(const DiagGaussianParams& params) {
  double total = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double mu = params.mean[i], sd = params.scale[i];
    require(sd > 0.0, "gaussian_kl_std_normal needs positive scale");
    total += 0.5 * (mu * mu + sd * sd - 1.0) - std::log(sd);
  }
  return std::max(total, 0.0);
}

std::vector<double> reparam_gaussian_sample(const DiagGaussianParams& params, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = params.mean[i] + params.scale[i] * normal(rng);
  return out;
}

double log_mean_exp(std::span<const double> values) {
  require(!values.empty(), "log_mean_exp of empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double total = 0.0;
  for (double v : values) total += std::exp(v - m);
  return m + std::log(total / static_cast<double>(values.size()));
}

}  // namespace ppsvae
