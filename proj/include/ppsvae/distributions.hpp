#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ppsvae/tensor.hpp"

namespace ppsvae {

using Rng = std::mt19937_64;

/// Every Gaussian scale in the model is softplus(raw) + kScaleFloor.
inline constexpr double kScaleFloor = 1e-4;
/// Uniform draws feeding Gumbel noise are clamped to [eps, 1 - eps].
inline constexpr double kUniformEps = 1e-10;

double softplus(double x);
double scale_from_raw(double raw);
/// Inverse of scale_from_raw for scale > kScaleFloor.
double raw_from_scale(double scale);

/// Nonnegative weights over K categories summing to one.
struct SimplexVector {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  std::size_t argmax() const;
  /// Throws ContractViolation unless entries are >= 0 and sum to 1 within tol.
  void validate(double tol = 1e-6) const;
};

struct DiagGaussianParams {
  std::vector<double> mean;
  std::vector<double> scale;

  DiagGaussianParams() = default;
  DiagGaussianParams(std::vector<double> mean, std::vector<double> scale);
  std::size_t size() const { return mean.size(); }
};

/// Standard Gumbel value for a uniform draw (clamped away from 0 and 1).
double gumbel_from_uniform(double u);
Tensor sample_gumbel(const Shape& shape, Rng& rng);

/// softmax((logits + noise) / temperature); one-hot at its argmax when hard.
SimplexVector gumbel_softmax(std::span<const double> logits, std::span<const double> noise, double temperature,
                             bool hard);
SimplexVector gumbel_softmax_sample(std::span<const double> logits, double temperature, Rng& rng, bool hard);

/// log softmax(logits) at the hot index of a strict one-hot vector.
double categorical_log_prob(std::span<const double> one_hot, std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

double diag_gaussian_log_prob(std::span<const double> x, const DiagGaussianParams& params);
double gaussian_kl_std_normal(const DiagGaussianParams& params);
std::vector<double> reparam_gaussian_sample(const DiagGaussianParams& params, Rng& rng);
/// log(mean(exp(values))) with max subtraction.
double log_mean_exp(std::span<const double> values);

}  // namespace ppsvae
