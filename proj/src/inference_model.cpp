#include "ppsvae/inference_model.hpp"

#include <algorithm>
#include <cmath>

namespace ppsvae {

const char* to_string(Posterior p) { return p == Posterior::Independent ? "independent" : "autoregressive"; }

Posterior parse_posterior(const std::string& s) {
  if (s == "independent") return Posterior::Independent;
  if (s == "autoregressive") return Posterior::Autoregressive;
  throw UsageError("unknown posterior variant '" + s + "' (expected independent|autoregressive)");
}

void check_binary(const Tensor& mask, const char* what) {
  for (double v : mask.vec())
    require(v == 0.0 || v == 1.0, std::string(what) + ": mask is not binary");
}

int ContextSet::popcount() const {
  int n = 0;
  for (double v : mask.vec()) n += v != 0.0;
  return n;
}

void ContextSet::check_invariants(const Tensor& y) const {
  check_binary(mask, "context set");
  const int count = popcount();
  require(count >= 1 && count <= M, "context popcount outside [1, M]");
  require(values == lookup_values(y, mask), "context values differ from y * mask");
  Tensor counts(mask.shape());
  for (int loc : locations) counts[static_cast<std::size_t>(loc)] += 1.0;
  require(dedup_mask(counts) == mask, "mask is not the union of the sampled locations");
}

namespace {

// Row-wise argmax, first index on ties.
std::vector<int> row_argmax(const Tensor& t) {
  const int n = t.dim(0), k = t.dim(1);
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const double* row = t.data() + static_cast<std::size_t>(i) * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

void check_nearly_binary(const Tensor& mask, const char* what) {
  // Straight-through residuals under noise replay are tiny; anything else is a caller error.
  for (double v : mask.vec()) {
    if (!std::isfinite(v)) continue;  // surfaces later as a non-finite objective term
    const double r = std::round(v);
    require((r == 0.0 || r == 1.0) && std::abs(v - r) < 0.05, std::string(what) + ": mask is not binary");
  }
}

}  // namespace

ContextSet context_at(const ContextBatch& batch, int n) {
  const Tensor& m = batch.mask.value();
  const int h = m.dim(2), w = m.dim(3);
  ContextSet out;
  out.M = batch.M;
  out.mask = m.slice_batch(n).reshaped({h, w});
  const Tensor& v = batch.values.value();
  out.values = v.slice_batch(n).reshaped({v.dim(1), h, w});
  for (std::size_t d = 0; d < batch.onehots.size(); ++d) {
    const Tensor row = batch.onehots[d].value().slice_batch(n);
    out.onehots.push_back(SimplexVector{row.vec()});
    out.locations.push_back(batch.locations[d][static_cast<std::size_t>(n)]);
  }
  return out;
}

ContextBatch batch_contexts(const std::vector<ContextSet>& contexts) {
  require(!contexts.empty(), "batch_contexts of nothing");
  const int n = static_cast<int>(contexts.size());
  const Tensor& m0 = contexts.front().mask;
  const Tensor& v0 = contexts.front().values;
  const int h = m0.dim(0), w = m0.dim(1), c = v0.dim(0), k = h * w;
  const int draws = static_cast<int>(contexts.front().locations.size());
  std::vector<Tensor> masks, values;
  std::vector<Tensor> onehots(static_cast<std::size_t>(draws), Tensor({n, k}));
  ContextBatch out;
  out.M = contexts.front().M;
  out.locations.assign(static_cast<std::size_t>(draws), std::vector<int>(static_cast<std::size_t>(n)));
  for (int i = 0; i < n; ++i) {
    const auto& ctx = contexts[static_cast<std::size_t>(i)];
    require(ctx.mask.same_shape(m0) && ctx.values.same_shape(v0) &&
                static_cast<int>(ctx.locations.size()) == draws,
            "batch_contexts: inconsistent context shapes");
    masks.push_back(ctx.mask.reshaped({1, 1, h, w}));
    values.push_back(ctx.values.reshaped({1, c, h, w}));
    for (int d = 0; d < draws; ++d) {
      const int loc = ctx.locations[static_cast<std::size_t>(d)];
      onehots[static_cast<std::size_t>(d)][static_cast<std::size_t>(i) * k + loc] = 1.0;
      out.locations[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)] = loc;
    }
  }
  out.mask = ag::constant(stack_batch(masks));
  out.values = ag::constant(stack_batch(values));
  for (auto& t : onehots) {
    out.onehots.push_back(ag::constant(t));
    out.scored.push_back(out.onehots.back());
  }
  return out;
}

ag::Var location_logits_independent(const ModelParams& params, const ag::Var& y) {
  require(y.dim(1) == params.config().channels, "image channel count does not match the model");
  const ag::Var logits = params.h1(y);
  return ag::reshape(logits, {y.dim(0), y.dim(2) * y.dim(3)});
}

ag::Var location_logits_autoregressive(const ModelParams& params, const ag::Var& y, const ag::Var& accumulated_mask) {
  require(y.dim(1) == params.config().channels, "image channel count does not match the model");
  require(accumulated_mask.shape() == Shape({y.dim(0), 1, y.dim(2), y.dim(3)}), "accumulated mask shape");
  check_nearly_binary(accumulated_mask.value(), "location_logits_autoregressive");
  const ag::Var logits = params.h2(ag::concat_channels({y, accumulated_mask}));
  return ag::reshape(logits, {y.dim(0), y.dim(2) * y.dim(3)});
}

ContextBatch infer_context(const ModelParams& params, const ag::Var& y, const SamplingOptions& options,
                           NoiseStream& noise) {
  const int n = y.dim(0), h = y.dim(2), w = y.dim(3), k = h * w;
  require(options.M >= 1 && options.M < k, "M must satisfy 1 <= M < H*W");
  require(options.temperature > 0.0, "temperature must be positive");

  ContextBatch out;
  out.M = options.M;
  ag::Var counts = ag::constant(Tensor({n, k}));
  ag::Var shared_logits, shared_log_probs;
  if (options.posterior == Posterior::Independent) {
    shared_logits = location_logits_independent(params, y);
    shared_log_probs = ag::log_softmax_rows(shared_logits);
  }
  std::vector<ag::Var> log_terms;
  for (int m = 0; m < options.M; ++m) {
    ag::Var logits = shared_logits, log_probs = shared_log_probs;
    if (options.posterior == Posterior::Autoregressive) {
      const ag::Var accumulated = ag::reshape(ag::dedup_straight_through(counts), {n, 1, h, w});
      logits = location_logits_autoregressive(params, y, accumulated);
      log_probs = ag::log_softmax_rows(logits);
    }
    ag::Var perturbed = logits;
    if (!options.mode) perturbed = ag::add(logits, ag::constant(noise.gumbel({n, k})));
    perturbed = ag::scale(perturbed, 1.0 / options.temperature);
    const ag::Var soft = ag::softmax_rows(perturbed);

    std::vector<int> hot = row_argmax(perturbed.value());
    Tensor hard({n, k});
    for (int i = 0; i < n; ++i) hard[static_cast<std::size_t>(i) * k + hot[static_cast<std::size_t>(i)]] = 1.0;
    const ag::Var st = ag::straight_through(hard, soft, noise.anchor(soft.value()));

    counts = ag::add(counts, st);
    out.scored.push_back(st);
    out.onehots.push_back(options.hard ? st : soft);
    out.locations.push_back(std::move(hot));
    log_terms.push_back(ag::rows_dot(st, log_probs));
  }
  out.mask = ag::reshape(ag::dedup_straight_through(counts), {n, 1, h, w});
  out.values = ag::mul_channel_mask(y, out.mask);
  out.log_q = ag::sum_list(log_terms);
  return out;
}

ContextSet infer_context(const ModelParams& params, const Tensor& y, const SamplingOptions& options,
                         NoiseStream& noise) {
  require(y.rank() == 3, "infer_context expects a C x H x W image");
  ag::NoGradGuard no_grad;
  const ContextBatch b =
      infer_context(params, ag::constant(y.reshaped({1, y.dim(0), y.dim(1), y.dim(2)})), options, noise);
  return context_at(b, 0);
}

Tensor dedup_mask(const Tensor& counts) {
  Tensor out(counts.shape());
  for (std::size_t i = 0; i < counts.numel(); ++i) {
    const double c = counts[i];
    require(c >= 0.0 && c == std::floor(c), "dedup_mask needs nonnegative integer counts");
    out[i] = c > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

Tensor lookup_values(const Tensor& y, const Tensor& mask) {
  require(y.rank() == 3 && mask.rank() == 2 && y.dim(1) == mask.dim(0) && y.dim(2) == mask.dim(1),
          "lookup_values: y " + shape_str(y.shape()) + " mask " + shape_str(mask.shape()));
  check_binary(mask, "lookup_values");
  Tensor out(y.shape());
  const std::size_t hw = mask.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = y[i] * mask[i % hw];
  return out;
}

ag::Var lookup_values(const ag::Var& y, const ag::Var& mask) { return ag::mul_channel_mask(y, mask); }

Tensor complement_mask(const Tensor& mask) {
  check_binary(mask, "complement_mask");
  Tensor out(mask.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) out[i] = 1.0 - mask[i];
  return out;
}

AbstractBatch abstract_posterior(const ModelParams& params, const ag::Var& mask, const ag::Var& values) {
  const int n = mask.dim(0), d = params.config().latent_dim;
  const ag::Var pooled = ag::mean_spatial(params.h3(ag::concat_channels({mask, values})));
  const ag::Var out = ag::reshape(params.h3_out(pooled), {n, 2 * d, 1, 1});
  AbstractBatch a;
  a.mean = ag::reshape(ag::slice_channels(out, 0, d), {n, d});
  a.scale = ag::positive_scale(ag::reshape(ag::slice_channels(out, d, d), {n, d}), kScaleFloor);
  return a;
}

AbstractBatch infer_abstract(const ModelParams& params, const ContextBatch& ctx, NoiseStream& noise) {
  AbstractBatch a = abstract_posterior(params, ctx.mask, ctx.values);
  const ag::Var eps = ag::constant(noise.normal(a.mean.shape()));
  a.sample = ag::add(a.mean, ag::mul(a.scale, eps));
  return a;
}

AbstractLatent infer_abstract(const ModelParams& params, const ContextSet& ctx, NoiseStream& noise) {
  ag::NoGradGuard no_grad;
  const AbstractBatch a = infer_abstract(params, batch_contexts({ctx}), noise);
  AbstractLatent out;
  out.sample = a.sample.value().vec();
  out.posterior = DiagGaussianParams(a.mean.value().vec(), a.scale.value().vec());
  return out;
}

}  // namespace ppsvae
