#include "ppsvae/objective.hpp"

#include <algorithm>

namespace ppsvae {

ElboBreakdown ElboBatch::row(int n) const {
  const auto i = static_cast<std::size_t>(n);
  ElboBreakdown b;
  b.target_ll = target_ll.value()[i];
  b.kl_a = kl_a.value()[i];
  b.context_ll = context_ll.value()[i];
  b.location_ratio = location_ratio.value()[i];
  b.elbo = elbo.value()[i];
  return b;
}

std::vector<ElboBreakdown> ElboBatch::rows() const {
  std::vector<ElboBreakdown> out;
  for (int n = 0; n < elbo.dim(0); ++n) out.push_back(row(n));
  return out;
}

Tensor ElboBatch::log_weights() const {
  Tensor w = target_ll.value();
  for (std::size_t i = 0; i < w.numel(); ++i)
    w[i] = w[i] + context_ll.value()[i] - location_ratio.value()[i] + latent_log_ratio.value()[i];
  return w;
}

ElboBatch elbo_terms(const ModelParams& params, const Tensor& images, const SamplingOptions& options,
                     NoiseStream& noise) {
  const ModelConfig& c = params.config();
  require(images.rank() == 4 && images.dim(0) >= 1, "elbo_terms expects a nonempty N x C x H x W batch");
  require(images.dim(1) == c.channels && images.dim(2) == c.height && images.dim(3) == c.width,
          "elbo_terms: image shape " + shape_str(images.shape()) + " does not match the model");
  const ag::Var y = ag::constant(images);

  const ContextBatch ctx = infer_context(params, y, options, noise);
  const AbstractBatch a = infer_abstract(params, ctx, noise);

  ElboBatch out;
  const CnpPrediction cnp = convcnp_predict(params, ctx.mask, ctx.values);
  out.target_ll = ag::masked_gaussian_log_prob(y, cnp.mean, cnp.scale, ag::one_minus(ctx.mask));
  out.kl_a = ag::kl_std_normal(a.mean, a.scale);
  const GaussianField field = predict_context_values(params, ctx.mask, a.sample);
  out.context_ll = ag::masked_gaussian_log_prob(y, field.mean, field.scale, ctx.mask);

  out.log_q_locations = ctx.log_q;
  out.log_p_locations = location_log_prob_under_prior(ctx.scored, prior_location_logits(params, a.sample));
  out.location_ratio = ag::sub(out.log_q_locations, out.log_p_locations);
  out.elbo = ag::sub(ag::add(ag::sub(out.target_ll, out.kl_a), out.context_ll), out.location_ratio);

  {
    const Tensor zeros(a.mean.shape(), 0.0), ones(a.mean.shape(), 1.0);
    const ag::Var log_prior = ag::gaussian_log_prob_rows(a.sample, ag::constant(zeros), ag::constant(ones));
    const ag::Var log_post = ag::gaussian_log_prob_rows(a.sample, a.mean, a.scale);
    out.latent_log_ratio = ag::sub(log_prior, log_post);
  }
  return out;
}

ElboBreakdown elbo_terms_single(const ModelParams& params, const Tensor& image, const SamplingOptions& options,
                                NoiseStream& noise) {
  require(image.rank() == 3, "elbo_terms_single expects a C x H x W image");
  ag::NoGradGuard no_grad;
  return elbo_terms(params, image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), options, noise).row(0);
}

ag::Var training_loss(const ModelParams& params, const Tensor& images, const SamplingOptions& options,
                      NoiseStream& noise) {
  require(images.rank() == 4 && images.dim(0) >= 1, "training_loss needs a nonempty batch");
  const ElboBatch b = elbo_terms(params, images, options, noise);
  return ag::scale(ag::mean_all(b.elbo), -1.0);
}

double single_sample_log_weight(const ModelParams& params, const Tensor& image, const SamplingOptions& options,
                                NoiseStream& noise) {
  require(image.rank() == 3, "single_sample_log_weight expects a C x H x W image");
  ag::NoGradGuard no_grad;
  const ElboBatch b =
      elbo_terms(params, image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), options, noise);
  return b.log_weights()[0];
}

double iwae_log_marginal(const ModelParams& params, const Tensor& image, int K, const SamplingOptions& options,
                         NoiseStream& noise) {
  require(K >= 1, "iwae_log_marginal needs K >= 1");
  require(image.rank() == 3, "iwae_log_marginal expects a C x H x W image");
  ag::NoGradGuard no_grad;
  constexpr int kChunk = 64;
  std::vector<double> weights;
  weights.reserve(static_cast<std::size_t>(K));
  for (int start = 0; start < K; start += kChunk) {
    const int n = std::min(kChunk, K - start);
    const std::vector<Tensor> copies(static_cast<std::size_t>(n),
                                     image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
    const Tensor w = elbo_terms(params, stack_batch(copies), options, noise).log_weights();
    weights.insert(weights.end(), w.vec().begin(), w.vec().end());
  }
  return log_mean_exp(weights);
}

}  // namespace ppsvae
