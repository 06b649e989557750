#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppsvae/autograd.hpp"
#include "ppsvae/distributions.hpp"

namespace ppsvae {

/// Named learnable arrays; the unit that checkpoints and optimizers see.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    ag::Var var;
  };

  ag::Var add(std::string name, Tensor init);
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  /// FNV-1a over names, shapes and raw bytes of every value.
  std::uint64_t checksum() const;
  /// Overwrites values from an identically laid out set.
  void copy_values_from(const ParamSet& other);
  bool all_finite() const;

 private:
  std::vector<Entry> entries_;
};

/// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(const Shape& shape, int fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamSet& params, const std::string& name, const ConvGeometry& geometry, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  const ConvGeometry& geometry() const { return geometry_; }
  ag::Var weight, bias;

 private:
  ConvGeometry geometry_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& params, const std::string& name, int in_features, int out_features, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  ag::Var weight, bias;
};

struct ConvBlockConfig {
  int channels = 32;
  int kernel_size = 7;
  double negative_slope = 0.01;
  int expansion = 2;
  bool normalize = true;
  Padding padding = Padding::Zero;

  void validate() const;
};

/// Residual block: depthwise conv, channel norm, pointwise expansion,
/// leaky activation, pointwise projection, additive skip.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParamSet& params, const std::string& name, const ConvBlockConfig& config, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  const ConvBlockConfig& config() const { return config_; }

  Conv2d depthwise, expand, project;
  ag::Var norm_gain, norm_bias;

 private:
  ConvBlockConfig config_;
};

ag::Var conv_block_apply(const ConvBlock& block, const ag::Var& x);

struct ConvNetConfig {
  int in_channels = 1;
  int out_channels = 1;
  int width = 32;
  int blocks = 3;
  int stem_kernel = 3;
  ConvBlockConfig block;
};

/// Full-resolution conv stack: stem conv, residual blocks, 1x1 head.
class ConvNet {
 public:
  ConvNet() = default;
  ConvNet(ParamSet& params, const std::string& name, const ConvNetConfig& config, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  /// Activations before the 1x1 head.
  ag::Var features(const ag::Var& x) const;
  const ConvNetConfig& config() const { return config_; }

  Conv2d stem;
  std::vector<ConvBlock> blocks;
  Conv2d head;

 private:
  ConvNetConfig config_;
};

/// N x D latent to N x D x H x W, every location a copy of the row.
ag::Var spatial_broadcast(const ag::Var& a, int height, int width);
/// Plain-value form for a single D-vector: D x H x W.
Tensor spatial_broadcast(std::span<const double> a, int height, int width);
/// Two constant channels holding row / column coordinates in [-1, 1].
ag::Var coordinate_channels(int batch, int height, int width);

}  // namespace ppsvae
