#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppsvae/training.hpp"

namespace ppsvae {

// ---- PPS-RAND and imputation ----

/// M distinct locations drawn uniformly without replacement; values by lookup.
ContextSet random_context(const Tensor& y, int M, Rng& rng);

/// Mean over target elements (pixel x channel) of log N(y | CNP mean, scale).
double imputation_log_likelihood(const ModelParams& params, const ContextSet& ctx, const Tensor& y);

/// Mean squared error of the CNP mean against y over target elements.
double imputation_squared_error(const ModelParams& params, const ContextSet& ctx, const Tensor& y);

// ---- probes ----

enum class FeatureKind { YmSample, YmMode, AbstractA, Image, RandomYm, VaeZ };

const char* to_string(FeatureKind k);
FeatureKind parse_feature_kind(const std::string& s);
bool is_spatial(FeatureKind k);

struct ProbeReport {
  std::string feature_kind;
  double f1_macro_mean = 0.0;
  double f1_macro_std = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> f1_per_seed;
  int train_size = 0, test_size = 0;

  std::string to_json() const;
};

struct ProbeOptions {
  int max_epochs = 30;
  int patience = 5;
  int batch_size = 64;
  double learning_rate = 2e-3;
  double validation_fraction = 0.2;
  /// Random shift by up to crop_pad pixels and horizontal flips (spatial features).
  bool augment = true;
  int crop_pad = 1;
  int hidden = 64;      // MLP width
  int conv_width = 16;  // conv classifier width
};

double f1_macro(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes);

/// Trains a fresh classifier per seed on (train_features, train_labels) with
/// early stopping on a held-out slice of the training data, and reports
/// F1-macro on the test set. Spatial features are N x C x H x W and use a
/// small conv classifier; vector features are N x F and use a 3-layer MLP.
ProbeReport probe_train_eval(const std::string& feature_kind, const Tensor& train_features,
                             const std::vector<int>& train_labels, const Tensor& test_features,
                             const std::vector<int>& test_labels, const std::vector<std::uint64_t>& seeds,
                             const ProbeOptions& options = {});

/// Probe features of every image in ds under the model (frozen, no gradients).
/// Spatial kinds give N x (C+1) x H x W (values then mask); image gives the
/// images themselves; abstract-a gives the N x D posterior means.
Tensor pps_features(const ModelParams& params, const Dataset& ds, FeatureKind kind, int M, double tau,
                    Posterior variant, std::uint64_t seed);

// ---- vanilla VAE baseline ----

class VaeParams {
 public:
  VaeParams(const ModelConfig& config, std::uint64_t seed);
  VaeParams(const VaeParams&) = delete;
  VaeParams& operator=(const VaeParams&) = delete;
  VaeParams(VaeParams&&) = default;
  VaeParams& operator=(VaeParams&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Conv2d enc_stem, enc_mid;
  ConvBlock enc_block;
  Linear enc_out;
  Linear dec_in;
  ConvBlock dec_block;
  Conv2d dec_head;

 private:
  ModelConfig config_;
  ParamSet params_;
};

struct VaeElbo {
  ag::Var reconstruction, kl, elbo;  // each N
  ag::Var mean, scale;               // posterior, N x D
};

AbstractBatch vae_encode(const VaeParams& vae, const ag::Var& images);
GaussianField vae_decode(const VaeParams& vae, const ag::Var& z);
VaeElbo vae_elbo(const VaeParams& vae, const Tensor& images, NoiseStream& noise);
/// ELBO with an explicitly supplied posterior and reparameterization noise.
VaeElbo vae_elbo_given_posterior(const VaeParams& vae, const Tensor& images, const ag::Var& mean,
                                 const ag::Var& scale, const Tensor& eps);
/// Decoder means for z ~ N(0, I): n x C x H x W.
Tensor vae_generate(const VaeParams& vae, int n, NoiseStream& noise);

struct VaeTrainResult {
  Checkpoint final;
  std::vector<double> elbo_per_step;
};

/// Trains the baseline with the optimizer settings of config; the latent
/// size is config.latent_dim and the network width config.net_width.
VaeTrainResult vae_train(const TrainConfig& config, const Dataset& ds, const std::filesystem::path& out_dir = {});
VaeParams vae_from_checkpoint(const Checkpoint& ckpt);
/// Posterior means of every image: N x D.
Tensor vae_features(const VaeParams& vae, const Dataset& ds);

// ---- diversity and geometry ----

/// Mean pairwise L2 distance between flattened images.
double sample_diversity(const std::vector<Tensor>& images);

/// Pixels of a binary H x W mask that have a 4-neighbor of the other value.
std::vector<std::pair<int, int>> boundary_pixels(const Tensor& shape_mask);
/// Mean Euclidean distance from each location (flat index) to the nearest boundary pixel.
double mean_edge_distance(const std::vector<int>& locations, const Tensor& shape_mask);

/// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
double sign_test_p(int wins, int losses);

}  // namespace ppsvae
