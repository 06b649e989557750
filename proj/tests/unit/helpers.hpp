#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "ppsvae/model.hpp"
#include "ppsvae/tensor.hpp"

namespace testing {

inline ppsvae::ModelConfig tiny_config(int h = 6, int w = 6, int c = 1, int d = 4,
                                       ppsvae::Padding padding = ppsvae::Padding::Zero) {
  ppsvae::ModelConfig cfg;
  cfg.channels = c;
  cfg.height = h;
  cfg.width = w;
  cfg.latent_dim = d;
  cfg.net_width = 4;
  cfg.blocks = 1;
  cfg.kernel_size = 3;
  cfg.expansion = 2;
  cfg.padding = padding;
  return cfg;
}

/// Uniform [0, 1] values of the given shape.
inline ppsvae::Tensor random_tensor(const ppsvae::Shape& shape, std::uint64_t seed, double lo = 0.0,
                                    double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ppsvae::Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ppsvae_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool bitwise_equal(const ppsvae::Tensor& a, const ppsvae::Tensor& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

}  // namespace testing

#include "ppsvae/neural_blocks.hpp"

namespace testing {

/// Rewires a ConvNet so that output channel 0 = alpha * input channel `in_channel`
/// (+ bias). Blocks become identities; other output channels are zero + bias.
inline void make_scaled_passthrough(ppsvae::ConvNet& net, double alpha, int in_channel = 0, double bias = 0.0) {
  auto zero = [](ppsvae::ag::Var v) { v.mutable_value().fill(0.0); };
  zero(net.stem.weight);
  zero(net.stem.bias);
  for (auto& b : net.blocks) {
    zero(b.depthwise.weight);
    zero(b.depthwise.bias);
    zero(b.expand.weight);
    zero(b.expand.bias);
    zero(b.project.weight);
    zero(b.project.bias);
  }
  zero(net.head.weight);
  zero(net.head.bias);
  ppsvae::Tensor& w = net.stem.weight.mutable_value();
  const int k = w.dim(2), c = k / 2;
  w[((static_cast<std::size_t>(0) * w.dim(1) + in_channel) * k + c) * k + c] = 1.0;
  net.head.weight.mutable_value()[0] = alpha;
  net.head.bias.mutable_value()[0] = bias;
}

}  // namespace testing
