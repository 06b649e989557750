#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ppsvae/model.hpp"
#include "ppsvae/neural_blocks.hpp"

using namespace ppsvae;
using testing::random_tensor;

namespace {
ConvBlockConfig block_config(int channels, bool normalize = true) {
  ConvBlockConfig c;
  c.channels = channels;
  c.kernel_size = 5;
  c.normalize = normalize;
  return c;
}
}  // namespace

TEST_CASE("conv_block_apply: output shape equals input shape") {
  Rng rng(1);
  ParamSet ps;
  const ConvBlock block(ps, "b", block_config(6), rng);
  for (auto [h, w] : {std::pair{4, 4}, std::pair{7, 3}, std::pair{1, 1}}) {
    const ag::Var x = ag::constant(random_tensor({2, 6, h, w}, 2));
    const ag::Var y = conv_block_apply(block, x);
    CHECK(y.shape() == x.shape());
    CHECK(all_finite(y.value()));
  }
}

TEST_CASE("conv_block_apply: zero parameters leave only the residual identity") {
  for (bool normalize : {true, false}) {
    Rng rng(3);
    ParamSet ps;
    const ConvBlock block(ps, "b", block_config(4, normalize), rng);
    for (const auto& e : ps.entries()) const_cast<ag::Var&>(e.var).mutable_value().fill(0.0);
    const Tensor x = random_tensor({1, 4, 5, 5}, 4, -1, 1);
    CHECK(conv_block_apply(block, ag::constant(x)).value() == x);
  }
}

TEST_CASE("conv_block_apply: bitwise reproducible") {
  Rng rng(5);
  ParamSet ps;
  const ConvBlock block(ps, "b", block_config(3), rng);
  const ag::Var x = ag::constant(random_tensor({2, 3, 6, 6}, 6));
  CHECK(conv_block_apply(block, x).value() == conv_block_apply(block, x).value());
}

TEST_CASE("conv_block_apply: channel mismatch is a contract violation") {
  Rng rng(7);
  ParamSet ps;
  const ConvBlock block(ps, "b", block_config(3), rng);
  CHECK_THROWS_AS(conv_block_apply(block, ag::constant(Tensor({1, 4, 5, 5}))), ContractViolation);
}

TEST_CASE("ConvBlockConfig: validation") {
  ConvBlockConfig c = block_config(3);
  CHECK_NOTHROW(c.validate());
  c.kernel_size = 4;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  c = block_config(0);
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  c = block_config(3);
  c.negative_slope = 1.0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
}

TEST_CASE("spatial_broadcast: every location holds the latent") {
  const std::vector<double> a{1.0, 2.0};
  const Tensor t = spatial_broadcast(a, 2, 2);
  CHECK(t.shape() == Shape{2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    CHECK(t[static_cast<std::size_t>(i)] == 1.0);
    CHECK(t[static_cast<std::size_t>(4 + i)] == 2.0);
  }
  const std::vector<double> b{0.5, -1.0, 3.0};
  const Tensor u = spatial_broadcast(b, 3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int d = 0; d < 3; ++d) CHECK(u[static_cast<std::size_t>((d * 3 + i) * 4 + j)] == b[static_cast<std::size_t>(d)]);
  CHECK_THROWS_AS(spatial_broadcast(std::vector<double>{}, 2, 2), ContractViolation);
}

TEST_CASE("spatial_broadcast: gradient of the sum is H*W per latent entry") {
  const ag::Var a = ag::parameter(Tensor({1, 3}, std::vector<double>{0.1, 0.2, 0.3}));
  const ag::Var out = spatial_broadcast(a, 4, 5);
  CHECK(out.shape() == Shape{1, 3, 4, 5});
  ag::backward(ag::scale(ag::mean_all(out), static_cast<double>(out.value().numel())));
  for (int d = 0; d < 3; ++d) CHECK(a.grad()[static_cast<std::size_t>(d)] == doctest::Approx(20.0));

  // the same value by central differences
  auto total = [](double a0) {
    return sum(spatial_broadcast(std::vector<double>{a0, 0.2, 0.3}, 4, 5));
  };
  CHECK((total(0.1 + 1e-5) - total(0.1 - 1e-5)) / 2e-5 == doctest::Approx(20.0).epsilon(1e-8));
}

TEST_CASE("coordinate_channels: two channels spanning [-1, 1]") {
  const ag::Var c = coordinate_channels(2, 3, 5);
  CHECK(c.shape() == Shape{2, 2, 3, 5});
  CHECK(c.value().at(0, 0, 0, 0) == -1.0);
  CHECK(c.value().at(0, 0, 2, 0) == 1.0);
  CHECK(c.value().at(1, 1, 0, 4) == 1.0);
  CHECK(c.value().at(1, 1, 0, 0) == -1.0);
}

TEST_CASE("initialization: fan-in uniform kernels and zero biases") {
  Rng rng(9);
  const Tensor w = fan_in_uniform({8, 4, 3, 3}, 36, rng);
  double lo = 1.0, hi = -1.0;
  for (double v : w.vec()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -1.0 / 6);
  CHECK(hi <= 1.0 / 6);
  CHECK(hi - lo > 0.25);
  ParamSet ps;
  ConvGeometry g;
  g.in_channels = 2;
  g.out_channels = 3;
  g.kernel = 3;
  const Conv2d conv(ps, "c", g, rng);
  CHECK(sum(conv.bias.value()) == 0.0);
}

TEST_CASE("ParamSet: names are unique and checksums track values") {
  ParamSet ps;
  ps.add("w", Tensor({2}, 1.0));
  CHECK_THROWS_AS(ps.add("w", Tensor({2})), ContractViolation);
  const auto before = ps.checksum();
  const_cast<ag::Var&>(ps.entries()[0].var).mutable_value()[1] = 1.5;
  CHECK(ps.checksum() != before);
  CHECK(ps.scalar_count() == 2);
}

TEST_CASE("ModelParams: every network preserves H x W and outputs are finite") {
  ModelConfig cfg = testing::tiny_config(8, 10, 3, 5);
  const ModelParams m(cfg, 11);
  CHECK(m.params().all_finite());
  const ag::Var y = ag::constant(random_tensor({2, 3, 8, 10}, 12));
  CHECK(m.h1(y).shape() == Shape{2, 1, 8, 10});
  const ag::Var mask = ag::constant(Tensor({2, 1, 8, 10}));
  CHECK(m.h2(ag::concat_channels({y, mask})).shape() == Shape{2, 1, 8, 10});
  CHECK(m.g3(ag::concat_channels({mask, y})).shape() == Shape{2, 6, 8, 10});
  CHECK(all_finite(m.g3(ag::concat_channels({mask, y})).value()));
}

TEST_CASE("ModelParams: same seed, same parameters") {
  const ModelConfig cfg = testing::tiny_config();
  CHECK(ModelParams(cfg, 4).params().checksum() == ModelParams(cfg, 4).params().checksum());
  CHECK(ModelParams(cfg, 4).params().checksum() != ModelParams(cfg, 5).params().checksum());
}
