#pragma once

#include <vector>

#include "ppsvae/generative_model.hpp"

namespace ppsvae {

/// One image's ELBO split into its four terms (nats, summed over pixels).
struct ElboBreakdown {
  double target_ll = 0.0;       // log p(y_T | x_T, x_M, y_M)
  double kl_a = 0.0;            // KL[q(a | x_M, y_M) || p(a)]
  double context_ll = 0.0;      // log p(y_M | x_M, a)
  double location_ratio = 0.0;  // log q(x_M | y) - log p(x_M | a)
  double elbo = 0.0;

  double recombined() const { return target_ll - kl_a + context_ll - location_ratio; }
};

/// Differentiable per-image terms for a batch.
struct ElboBatch {
  ag::Var target_ll, kl_a, context_ll, location_ratio, elbo;  // each N
  /// log p(a) - log q(a) at the drawn a; replaces -kl_a in importance weights.
  ag::Var latent_log_ratio;
  ag::Var log_q_locations, log_p_locations;

  ElboBreakdown row(int n) const;
  std::vector<ElboBreakdown> rows() const;
  /// Single-sample log importance weight per image.
  Tensor log_weights() const;
};

ElboBatch elbo_terms(const ModelParams& params, const Tensor& images, const SamplingOptions& options,
                     NoiseStream& noise);
ElboBreakdown elbo_terms_single(const ModelParams& params, const Tensor& image, const SamplingOptions& options,
                                NoiseStream& noise);

/// Mean of -elbo over the batch (one posterior sample per image).
ag::Var training_loss(const ModelParams& params, const Tensor& images, const SamplingOptions& options,
                      NoiseStream& noise);

/// Single-sample estimate log p(a,x,y) - log q(a,x_M|y) for one image.
double single_sample_log_weight(const ModelParams& params, const Tensor& image, const SamplingOptions& options,
                                NoiseStream& noise);

/// log-mean-exp over K importance samples of the log weight. Samples are
/// drawn in a single batch of K copies of the image.
double iwae_log_marginal(const ModelParams& params, const Tensor& image, int K, const SamplingOptions& options,
                         NoiseStream& noise);

}  // namespace ppsvae
