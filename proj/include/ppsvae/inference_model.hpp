#pragma once

#include <vector>

#include "ppsvae/autograd.hpp"
#include "ppsvae/model.hpp"
#include "ppsvae/noise.hpp"

namespace ppsvae {

enum class Posterior { Independent, Autoregressive };

const char* to_string(Posterior p);
Posterior parse_posterior(const std::string& s);

struct SamplingOptions {
  int M = 8;
  double temperature = 1.0;
  Posterior posterior = Posterior::Independent;
  /// One-hot draws (straight-through gradients) rather than relaxed ones.
  bool hard = true;
  /// Noise-free argmax of the logits at every step.
  bool mode = false;
};

/// One image's context set, as plain arrays.
struct ContextSet {
  Tensor mask;    // H x W, binary
  Tensor values;  // C x H x W, y * mask
  std::vector<SimplexVector> onehots;  // pre-dedup draws, in sampling order
  std::vector<int> locations;          // argmax of each draw
  int M = 0;

  int popcount() const;
  /// Throws ContractViolation if any ContextSet invariant fails for image y.
  void check_invariants(const Tensor& y) const;
};

/// Batched context sets as differentiable values.
struct ContextBatch {
  ag::Var mask;    // N x 1 x H x W
  ag::Var values;  // N x C x H x W
  /// Per draw, N x K: straight-through one-hots (hard) or relaxed draws.
  std::vector<ag::Var> onehots;
  /// Per draw, N x K straight-through one-hots used for scoring.
  std::vector<ag::Var> scored;
  std::vector<std::vector<int>> locations;  // [draw][n]
  /// Per row log q(x_M | y) of the pre-dedup draws.
  ag::Var log_q;
  int M = 0;

  int batch() const { return mask.dim(0); }
};

ContextSet context_at(const ContextBatch& batch, int n);
/// Stacks plain context sets (no location scores attached).
ContextBatch batch_contexts(const std::vector<ContextSet>& contexts);

/// N x C x H x W -> N x K logits shared by every independent draw.
ag::Var location_logits_independent(const ModelParams& params, const ag::Var& y);
/// Logits conditioned on y and the (binary) mask accumulated so far.
ag::Var location_logits_autoregressive(const ModelParams& params, const ag::Var& y, const ag::Var& accumulated_mask);

ContextBatch infer_context(const ModelParams& params, const ag::Var& y, const SamplingOptions& options,
                           NoiseStream& noise);
ContextSet infer_context(const ModelParams& params, const Tensor& y, const SamplingOptions& options,
                         NoiseStream& noise);

/// indicator(count > 0); counts must be nonnegative integers.
Tensor dedup_mask(const Tensor& counts);
/// y (C x H x W) times a binary H x W mask broadcast over channels.
Tensor lookup_values(const Tensor& y, const Tensor& mask);
ag::Var lookup_values(const ag::Var& y, const ag::Var& mask);
Tensor complement_mask(const Tensor& mask);

struct AbstractBatch {
  ag::Var mean;    // N x D
  ag::Var scale;   // N x D, >= kScaleFloor
  ag::Var sample;  // N x D
};

struct AbstractLatent {
  std::vector<double> sample;
  DiagGaussianParams posterior;
};

AbstractBatch infer_abstract(const ModelParams& params, const ContextBatch& ctx, NoiseStream& noise);
/// Posterior parameters only, with no draw.
AbstractBatch abstract_posterior(const ModelParams& params, const ag::Var& mask, const ag::Var& values);
AbstractLatent infer_abstract(const ModelParams& params, const ContextSet& ctx, NoiseStream& noise);

void check_binary(const Tensor& mask, const char* what);

}  // namespace ppsvae
