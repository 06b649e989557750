#include "ppsvae/generative_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ppsvae {
namespace {

GaussianField split_gaussian(const ag::Var& out, int channels) {
  GaussianField f;
  f.mean = ag::slice_channels(out, 0, channels);
  f.scale = ag::positive_scale(ag::slice_channels(out, channels, channels), kScaleFloor);
  return f;
}

Tensor plane(const Tensor& batch, int n, Shape shape) { return batch.slice_batch(n).reshaped(std::move(shape)); }

}  // namespace

ag::Var prior_location_logits(const ModelParams& params, const ag::Var& a) {
  const ModelConfig& c = params.config();
  require(a.value().rank() == 2 && a.dim(1) == c.latent_dim, "prior_location_logits: latent shape");
  const int n = a.dim(0);
  const ag::Var input =
      ag::concat_channels({spatial_broadcast(a, c.height, c.width), coordinate_channels(n, c.height, c.width)});
  return ag::reshape(params.g1(input), {n, c.pixels()});
}

std::vector<double> prior_location_logits(const ModelParams& params, std::span<const double> a) {
  ag::NoGradGuard no_grad;
  const int d = static_cast<int>(a.size());
  return prior_location_logits(params, ag::constant(Tensor({1, d}, std::vector<double>(a.begin(), a.end()))))
      .value()
      .vec();
}

ag::Var location_log_prob_under_prior(const std::vector<ag::Var>& onehots, const ag::Var& prior_logits) {
  require(!onehots.empty(), "location_log_prob_under_prior needs at least one draw");
  const ag::Var log_probs = ag::log_softmax_rows(prior_logits);
  std::vector<ag::Var> terms;
  terms.reserve(onehots.size());
  for (const auto& oh : onehots) terms.push_back(ag::rows_dot(oh, log_probs));
  return ag::sum_list(terms);
}

double location_log_prob_under_prior(const std::vector<SimplexVector>& onehots, std::span<const double> prior_logits) {
  require(!onehots.empty(), "location_log_prob_under_prior needs at least one draw");
  double total = 0.0;
  for (const auto& oh : onehots) total += categorical_log_prob(oh.probs, prior_logits);
  return total;
}

GaussianField predict_context_values(const ModelParams& params, const ag::Var& mask, const ag::Var& a) {
  const ModelConfig& c = params.config();
  const int n = mask.dim(0);
  const ag::Var input = ag::concat_channels(
      {mask, spatial_broadcast(a, c.height, c.width), coordinate_channels(n, c.height, c.width)});
  return split_gaussian(params.g2(input), c.channels);
}

CnpPrediction convcnp_predict(const ModelParams& params, const ag::Var& mask, const ag::Var& values) {
  return split_gaussian(params.g3(ag::concat_channels({mask, values})), params.config().channels);
}

CnpArrays convcnp_predict(const ModelParams& params, const Tensor& mask, const Tensor& values) {
  require(mask.rank() == 2 && values.rank() == 3, "convcnp_predict expects H x W mask and C x H x W values");
  check_binary(mask, "convcnp_predict");
  const std::size_t hw = mask.numel();
  for (std::size_t i = 0; i < values.numel(); ++i)
    require(mask[i % hw] != 0.0 || values[i] == 0.0, "convcnp_predict: values nonzero off the mask");
  ag::NoGradGuard no_grad;
  const int c = values.dim(0), h = values.dim(1), w = values.dim(2);
  const CnpPrediction p = convcnp_predict(params, ag::constant(mask.reshaped({1, 1, h, w})),
                                          ag::constant(values.reshaped({1, c, h, w})));
  return {p.mean.value().reshaped({c, h, w}), p.scale.value().reshaped({c, h, w})};
}

void GenerationTrace::check_invariants() const {
  check_binary(mask, "generation trace");
  const std::size_t hw = mask.numel();
  require(image.same_shape(context_values) && image.same_shape(target_values), "trace shape mismatch");
  for (std::size_t i = 0; i < image.numel(); ++i) {
    require(image[i] == context_values[i] + target_values[i], "trace image != y_M + y_T");
    if (mask[i % hw] == 0.0) require(context_values[i] == 0.0, "trace context values nonzero off-mask");
    if (mask[i % hw] != 0.0) require(target_values[i] == 0.0, "trace target values nonzero on-mask");
    require(std::isfinite(image[i]), "trace image not finite");
  }
}

namespace {

// Assembles traces from batched mask, context values and a.
std::vector<GenerationTrace> assemble(const ModelParams& params, const ag::Var& mask, const ag::Var& context_values,
                                      const Tensor& a, const std::vector<std::vector<int>>& locations,
                                      bool sample_targets, NoiseStream& noise) {
  const ModelConfig& c = params.config();
  const int n = mask.dim(0);
  const CnpPrediction cnp = convcnp_predict(params, mask, context_values);
  Tensor target_field = cnp.mean.value();
  if (sample_targets) {
    const Tensor eps = noise.normal(target_field.shape());
    for (std::size_t i = 0; i < target_field.numel(); ++i) target_field[i] += cnp.scale.value()[i] * eps[i];
  }
  const Tensor targets = ag::mul_channel_mask(ag::constant(target_field), ag::one_minus(mask)).value();
  std::vector<GenerationTrace> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    GenerationTrace& t = out[static_cast<std::size_t>(i)];
    if (!a.empty()) {
      const Tensor row = a.slice_batch(i);
      t.a = row.vec();
    }
    t.mask = plane(mask.value(), i, {c.height, c.width});
    t.context_values = plane(context_values.value(), i, {c.channels, c.height, c.width});
    t.target_values = plane(targets, i, {c.channels, c.height, c.width});
    t.image = t.context_values;
    t.image.add_(t.target_values);
    for (const auto& draw : locations) t.locations.push_back(draw[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace

std::vector<GenerationTrace> generate_unconditional(const ModelParams& params, int n, const GenerationOptions& options,
                                                    NoiseStream& noise) {
  const ModelConfig& c = params.config();
  const int k = c.pixels();
  require(n >= 1, "generate_unconditional needs n >= 1");
  require(options.M >= 1 && options.M < k, "M must satisfy 1 <= M < H*W");
  require(options.temperature > 0.0, "temperature must be positive");
  ag::NoGradGuard no_grad;

  const Tensor a = noise.normal({n, c.latent_dim});
  const ag::Var av = ag::constant(a);
  const Tensor logits = prior_location_logits(params, av).value();
  Tensor counts({n, k});
  std::vector<std::vector<int>> locations;
  for (int m = 0; m < options.M; ++m) {
    const Tensor g = noise.gumbel({n, k});
    std::vector<int> hot(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_v = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * k + j;
        const double v = (logits[idx] + g[idx]) / options.temperature;
        if (v > best_v) best_v = v, best = j;
      }
      hot[static_cast<std::size_t>(i)] = best;
      counts[static_cast<std::size_t>(i) * k + best] += 1.0;
    }
    locations.push_back(std::move(hot));
  }
  const ag::Var mask = ag::constant(dedup_mask(counts).reshaped({n, 1, c.height, c.width}));
  const GaussianField field = predict_context_values(params, mask, av);
  Tensor context_field = field.mean.value();
  if (options.sample_context_values) {
    const Tensor eps = noise.normal(context_field.shape());
    for (std::size_t i = 0; i < context_field.numel(); ++i) context_field[i] += field.scale.value()[i] * eps[i];
  }
  const ag::Var context_values = ag::mul_channel_mask(ag::constant(context_field), mask);
  return assemble(params, mask, context_values, a, locations, options.sample_target_values, noise);
}

std::vector<GenerationTrace> reconstruct(const ModelParams& params, const Tensor& images,
                                         const SamplingOptions& options, NoiseStream& noise) {
  require(images.rank() == 4, "reconstruct expects N x C x H x W images");
  ag::NoGradGuard no_grad;
  const ContextBatch ctx = infer_context(params, ag::constant(images), options, noise);
  const AbstractBatch abstract = abstract_posterior(params, ctx.mask, ctx.values);
  return assemble(params, ctx.mask, ctx.values, abstract.mean.value(), ctx.locations, false, noise);
}

TraceScore score_trace(const ModelParams& params, const GenerationTrace& trace) {
  const ModelConfig& c = params.config();
  require(static_cast<int>(trace.a.size()) == c.latent_dim, "score_trace: latent size");
  require(!trace.locations.empty(), "score_trace: trace has no locations");
  ag::NoGradGuard no_grad;
  TraceScore s;
  const std::vector<double> zeros(trace.a.size(), 0.0), ones(trace.a.size(), 1.0);
  s.log_p_a = diag_gaussian_log_prob(trace.a, DiagGaussianParams(zeros, ones));

  const std::vector<double> logits = prior_location_logits(params, trace.a);
  for (int loc : trace.locations) {
    std::vector<double> oh(logits.size(), 0.0);
    oh[static_cast<std::size_t>(loc)] = 1.0;
    s.log_p_locations += categorical_log_prob(oh, logits);
  }

  const Shape img{1, c.channels, c.height, c.width};
  const ag::Var mask = ag::constant(trace.mask.reshaped({1, 1, c.height, c.width}));
  const ag::Var av = ag::constant(Tensor({1, c.latent_dim}, trace.a));
  const ag::Var context = ag::constant(trace.context_values.reshaped(img));
  const GaussianField field = predict_context_values(params, mask, av);
  s.log_p_context = ag::masked_gaussian_log_prob(context, field.mean, field.scale, mask).value()[0];
  const CnpPrediction cnp = convcnp_predict(params, mask, context);
  s.log_p_targets = ag::masked_gaussian_log_prob(ag::constant(trace.target_values.reshaped(img)), cnp.mean,
                                                 cnp.scale, ag::one_minus(mask))
                        .value()[0];
  s.joint = s.log_p_a + s.log_p_locations + s.log_p_context + s.log_p_targets;
  return s;
}

}  // namespace ppsvae
