#pragma once

#include <vector>

#include "ppsvae/inference_model.hpp"

namespace ppsvae {

struct GaussianField {
  ag::Var mean;   // N x C x H x W
  ag::Var scale;  // N x C x H x W, >= kScaleFloor
};

/// Per-pixel Gaussian over targets from the convolutional CNP.
using CnpPrediction = GaussianField;

/// N x D latent -> N x K location prior logits shared by every prior draw.
ag::Var prior_location_logits(const ModelParams& params, const ag::Var& a);
std::vector<double> prior_location_logits(const ModelParams& params, std::span<const double> a);

/// Per row sum over draws of log softmax(prior_logits) at each one-hot.
ag::Var location_log_prob_under_prior(const std::vector<ag::Var>& onehots, const ag::Var& prior_logits);
double location_log_prob_under_prior(const std::vector<SimplexVector>& onehots, std::span<const double> prior_logits);

/// Gaussian over pixel values given the mask and a; only on-mask pixels are scored.
GaussianField predict_context_values(const ModelParams& params, const ag::Var& mask, const ag::Var& a);

/// The convolutional CNP: channel-concat(mask density, values) through g3.
CnpPrediction convcnp_predict(const ModelParams& params, const ag::Var& mask, const ag::Var& values);
/// Plain-value form for one context set; errors if values are nonzero off-mask.
struct CnpArrays {
  Tensor mean;   // C x H x W
  Tensor scale;  // C x H x W
};
CnpArrays convcnp_predict(const ModelParams& params, const Tensor& mask, const Tensor& values);

struct GenerationTrace {
  std::vector<double> a;
  Tensor mask;            // H x W
  Tensor context_values;  // C x H x W, zero off-mask
  Tensor target_values;   // C x H x W, zero on-mask
  Tensor image;           // context_values + target_values, unclamped
  std::vector<int> locations;  // pre-dedup draws

  void check_invariants() const;
};

struct GenerationOptions {
  int M = 8;
  double temperature = 1.0;
  bool sample_context_values = false;
  bool sample_target_values = false;
};

std::vector<GenerationTrace> generate_unconditional(const ModelParams& params, int n, const GenerationOptions& options,
                                                    NoiseStream& noise);

/// Infers contexts for a batch of images (N x C x H x W) and imputes the rest.
std::vector<GenerationTrace> reconstruct(const ModelParams& params, const Tensor& images,
                                         const SamplingOptions& options, NoiseStream& noise);

/// Log-density of a trace under each generative factor.
struct TraceScore {
  double log_p_a = 0.0;
  double log_p_locations = 0.0;
  double log_p_context = 0.0;
  double log_p_targets = 0.0;
  double joint = 0.0;
};
TraceScore score_trace(const ModelParams& params, const GenerationTrace& trace);

}  // namespace ppsvae
