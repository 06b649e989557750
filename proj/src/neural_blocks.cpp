#include "ppsvae/neural_blocks.hpp"

#include <cmath>
#include <cstring>

namespace ppsvae {

ag::Var ParamSet::add(std::string name, Tensor init) {
  for (const auto& e : entries_) require(e.name != name, "duplicate parameter name " + name);
  ag::Var v = ag::parameter(std::move(init));
  entries_.push_back({std::move(name), v});
  return v;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.value().numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    for (int d : e.var.shape()) mix(&d, sizeof d);
    mix(e.var.value().data(), e.var.value().numel() * sizeof(double));
  }
  return h;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  require(other.entries_.size() == entries_.size(), "copy_values_from: parameter count mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    require(entries_[i].name == other.entries_[i].name &&
                entries_[i].var.shape() == other.entries_[i].var.shape(),
            "copy_values_from: layout mismatch at " + entries_[i].name);
    entries_[i].var.mutable_value() = other.entries_[i].var.value();
  }
}

bool ParamSet::all_finite() const {
  for (const auto& e : entries_)
    if (!ppsvae::all_finite(e.var.value())) return false;
  return true;
}

Tensor fan_in_uniform(const Shape& shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(shape);
  for (double& v : t.span()) v = u(rng);
  return t;
}

Conv2d::Conv2d(ParamSet& params, const std::string& name, const ConvGeometry& geometry, Rng& rng)
    : geometry_(geometry) {
  geometry_.validate();
  const int cin_g = geometry.in_channels / geometry.groups;
  const Shape wshape{geometry.out_channels, cin_g, geometry.kernel, geometry.kernel};
  weight = params.add(name + ".weight", fan_in_uniform(wshape, cin_g * geometry.kernel * geometry.kernel, rng));
  bias = params.add(name + ".bias", Tensor({geometry.out_channels}));
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
  require(x.dim(1) == geometry_.in_channels, "conv channel mismatch: got " + std::to_string(x.dim(1)) +
                                                 ", expected " + std::to_string(geometry_.in_channels));
  return ag::conv2d(x, weight, bias, geometry_);
}

Linear::Linear(ParamSet& params, const std::string& name, int in_features, int out_features, Rng& rng) {
  weight = params.add(name + ".weight", fan_in_uniform({out_features, in_features}, in_features, rng));
  bias = params.add(name + ".bias", Tensor({out_features}));
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }

void ConvBlockConfig::validate() const {
  require(channels >= 1, "conv block channels must be >= 1");
  require(kernel_size >= 1 && kernel_size % 2 == 1, "conv block kernel size must be odd");
  require(negative_slope > 0.0 && negative_slope < 1.0, "leaky slope must be in (0, 1)");
  require(expansion >= 1, "conv block expansion must be >= 1");
}

ConvBlock::ConvBlock(ParamSet& params, const std::string& name, const ConvBlockConfig& config, Rng& rng)
    : config_(config) {
  config.validate();
  const int c = config.channels, hidden = config.expansion * config.channels;
  depthwise = Conv2d(params, name + ".dw", {c, c, config.kernel_size, c, config.padding}, rng);
  if (config.normalize) {
    norm_gain = params.add(name + ".norm.gain", Tensor({c}, 1.0));
    norm_bias = params.add(name + ".norm.bias", Tensor({c}));
  }
  expand = Conv2d(params, name + ".pw1", {c, hidden, 1, 1, config.padding}, rng);
  project = Conv2d(params, name + ".pw2", {hidden, c, 1, 1, config.padding}, rng);
}

ag::Var ConvBlock::operator()(const ag::Var& x) const {
  require(x.dim(1) == config_.channels, "conv block channel mismatch");
  ag::Var h = depthwise(x);
  if (config_.normalize) h = ag::channel_layer_norm(h, norm_gain, norm_bias);
  h = ag::leaky_relu(expand(h), config_.negative_slope);
  return ag::add(x, project(h));
}

ag::Var conv_block_apply(const ConvBlock& block, const ag::Var& x) { return block(x); }

ConvNet::ConvNet(ParamSet& params, const std::string& name, const ConvNetConfig& config, Rng& rng)
    : config_(config) {
  ConvBlockConfig bc = config.block;
  bc.channels = config.width;
  config_.block = bc;
  stem = Conv2d(params, name + ".stem", {config.in_channels, config.width, config.stem_kernel, 1, bc.padding}, rng);
  for (int b = 0; b < config.blocks; ++b)
    blocks.emplace_back(params, name + ".block" + std::to_string(b), bc, rng);
  head = Conv2d(params, name + ".head", {config.width, config.out_channels, 1, 1, bc.padding}, rng);
}

ag::Var ConvNet::features(const ag::Var& x) const {
  ag::Var h = ag::leaky_relu(stem(x), config_.block.negative_slope);
  for (const auto& b : blocks) h = b(h);
  return h;
}

ag::Var ConvNet::operator()(const ag::Var& x) const { return head(features(x)); }

ag::Var spatial_broadcast(const ag::Var& a, int height, int width) {
  return ag::broadcast_spatial(a, height, width);
}

Tensor spatial_broadcast(std::span<const double> a, int height, int width) {
  require(!a.empty() && height >= 1 && width >= 1, "spatial_broadcast needs D, H, W >= 1");
  const int d = static_cast<int>(a.size());
  Tensor out({d, height, width});
  for (int c = 0; c < d; ++c)
    for (int i = 0; i < height * width; ++i) out[static_cast<std::size_t>(c) * height * width + i] = a[c];
  return out;
}

ag::Var coordinate_channels(int batch, int height, int width) {
  Tensor t({batch, 2, height, width});
  for (int n = 0; n < batch; ++n)
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w) {
        t.at(n, 0, h, w) = height > 1 ? -1.0 + 2.0 * h / (height - 1) : 0.0;
        t.at(n, 1, h, w) = width > 1 ? -1.0 + 2.0 * w / (width - 1) : 0.0;
      }
  return ag::constant(std::move(t));
}

}  // namespace ppsvae
