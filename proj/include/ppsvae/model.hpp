#pragma once

#include <cstdint>
#include <string>

#include "ppsvae/neural_blocks.hpp"

namespace ppsvae {

struct ModelConfig {
  int channels = 1;  // C
  int height = 16;
  int width = 16;
  int latent_dim = 16;  // D
  int net_width = 32;
  int blocks = 3;
  int kernel_size = 7;
  int stem_kernel = 3;
  int expansion = 2;
  double negative_slope = 0.01;
  bool normalize = true;
  Padding padding = Padding::Zero;

  int pixels() const { return height * width; }
  void validate() const;
};

/// Every learnable network of the model.
///
/// Inference side: h1 (independent location logits), h2 (autoregressive
/// location logits, y plus the accumulated mask), h3 + h3_out (abstract
/// posterior). Generative side: g1 (location prior from a), g2 (context
/// values from mask and a), g3 (the convolutional CNP over mask and values).
/// g1 and g2 see the broadcast latent plus two coordinate channels.
class ModelParams {
 public:
  ModelParams(const ModelConfig& config, std::uint64_t seed);
  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;
  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  ConvNet h1, h2, h3;
  Linear h3_out;
  ConvNet g1, g2, g3;

 private:
  ModelConfig config_;
  ParamSet params_;
};

}  // namespace ppsvae
