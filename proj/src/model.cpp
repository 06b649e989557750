#include "ppsvae/model.hpp"

namespace ppsvae {

void ModelConfig::validate() const {
  require(channels >= 1 && height >= 2 && width >= 2, "model image shape must be positive");
  require(latent_dim >= 1, "latent_dim must be >= 1");
  require(net_width >= 1 && blocks >= 0 && expansion >= 1, "network width/depth must be positive");
  require(kernel_size % 2 == 1 && stem_kernel % 2 == 1, "kernel sizes must be odd");
}

ModelParams::ModelParams(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng rng(seed);
  auto net = [&](int in, int out) {
    ConvNetConfig c;
    c.in_channels = in;
    c.out_channels = out;
    c.width = config.net_width;
    c.blocks = config.blocks;
    c.stem_kernel = config.stem_kernel;
    c.block.kernel_size = config.kernel_size;
    c.block.negative_slope = config.negative_slope;
    c.block.expansion = config.expansion;
    c.block.normalize = config.normalize;
    c.block.padding = config.padding;
    return c;
  };
  const int ch = config.channels, d = config.latent_dim;
  h1 = ConvNet(params_, "h1", net(ch, 1), rng);
  h2 = ConvNet(params_, "h2", net(ch + 1, 1), rng);
  h3 = ConvNet(params_, "h3", net(1 + ch, config.net_width), rng);
  h3_out = Linear(params_, "h3.out", config.net_width, 2 * d, rng);
  g1 = ConvNet(params_, "g1", net(d + 2, 1), rng);
  g2 = ConvNet(params_, "g2", net(1 + d + 2, 2 * ch), rng);
  g3 = ConvNet(params_, "g3", net(1 + ch, 2 * ch), rng);
}

}  // namespace ppsvae
