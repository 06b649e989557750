#include <doctest.h>

#include <cmath>
#include <functional>

#include "helpers.hpp"
#include "ppsvae/autograd.hpp"

using namespace ppsvae;
using testing::random_tensor;

namespace {

using Fn = std::function<ag::Var(const std::vector<ag::Var>&)>;

// Projects an op output onto fixed random weights so any shape reduces to a scalar.
ag::Var project(const ag::Var& out, std::uint64_t seed) {
  const ag::Var w = ag::constant(random_tensor(out.shape(), seed, -1, 1));
  return ag::mean_all(ag::mul(out, w));
}

/// Max relative error between backprop and central differences over every input element.
double fd_error(const Fn& f, std::vector<Tensor> inputs, double h = 1e-6) {
  std::vector<ag::Var> vars;
  for (const Tensor& t : inputs) vars.push_back(ag::parameter(t));
  const ag::Var out = f(vars);
  const ag::Var loss = project(out, 1234);
  ag::backward(loss);
  double worst = 0.0;
  for (std::size_t v = 0; v < inputs.size(); ++v) {
    const Tensor analytic = vars[v].grad().empty() ? Tensor(inputs[v].shape()) : vars[v].grad();
    for (std::size_t i = 0; i < inputs[v].numel(); ++i) {
      auto eval = [&](double delta) {
        std::vector<ag::Var> c;
        for (std::size_t u = 0; u < inputs.size(); ++u) {
          Tensor t = inputs[u];
          if (u == v) t[i] += delta;
          c.push_back(ag::constant(t));
        }
        return project(f(c), 1234).value()[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double err = std::abs(numeric - analytic[i]) / std::max(1e-6, std::abs(numeric) + std::abs(analytic[i]));
      worst = std::max(worst, std::abs(numeric - analytic[i]) < 1e-8 ? 0.0 : err);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("autograd: elementwise ops match finite differences") {
  const Tensor a = random_tensor({2, 3}, 1, -2, 2), b = random_tensor({2, 3}, 2, -2, 2);
  CHECK(fd_error([](auto& v) { return ag::add(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::sub(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::mul(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::scale(v[0], -3.5); }, {a}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::add_scalar(v[0], 0.5); }, {a}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::one_minus(v[0]); }, {a}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::leaky_relu(v[0], 0.01); }, {a}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::positive_scale(v[0], 1e-4); }, {a}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::exp(v[0]); }, {a}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::sum_list({v[0], v[1], v[0]}); }, {a, b}) < 1e-6);
}

TEST_CASE("autograd: convolutions match finite differences") {
  for (Padding padding : {Padding::Zero, Padding::Circular}) {
    ConvGeometry dense;
    dense.in_channels = 2;
    dense.out_channels = 3;
    dense.kernel = 3;
    dense.padding = padding;
    CHECK(fd_error([&](auto& v) { return ag::conv2d(v[0], v[1], v[2], dense); },
                   {random_tensor({2, 2, 4, 5}, 3, -1, 1), random_tensor({3, 2, 3, 3}, 4, -1, 1),
                    random_tensor({3}, 5, -1, 1)}) < 1e-6);
    ConvGeometry dw = dense;
    dw.in_channels = dw.out_channels = dw.groups = 3;
    dw.kernel = 5;
    CHECK(fd_error([&](auto& v) { return ag::conv2d(v[0], v[1], v[2], dw); },
                   {random_tensor({2, 3, 4, 4}, 6, -1, 1), random_tensor({3, 1, 5, 5}, 7, -1, 1),
                    random_tensor({3}, 8, -1, 1)}) < 1e-6);
    ConvGeometry pw = dense;
    pw.kernel = 1;
    CHECK(fd_error([&](auto& v) { return ag::conv2d(v[0], v[1], v[2], pw); },
                   {random_tensor({2, 2, 3, 3}, 9, -1, 1), random_tensor({3, 2, 1, 1}, 10, -1, 1),
                    random_tensor({3}, 11, -1, 1)}) < 1e-6);
  }
}

TEST_CASE("autograd: layers match finite differences") {
  CHECK(fd_error([](auto& v) { return ag::linear(v[0], v[1], v[2]); },
                 {random_tensor({3, 4}, 1, -1, 1), random_tensor({2, 4}, 2, -1, 1), random_tensor({2}, 3, -1, 1)}) <
        1e-6);
  CHECK(fd_error([](auto& v) { return ag::channel_layer_norm(v[0], v[1], v[2]); },
                 {random_tensor({2, 3, 2, 2}, 4, -1, 1), random_tensor({3}, 5, 0.5, 1.5), random_tensor({3}, 6, -1, 1)}) <
        1e-5);
  CHECK(fd_error([](auto& v) { return ag::avg_pool2(v[0]); }, {random_tensor({2, 2, 4, 6}, 7)}) < 1e-6);
}

TEST_CASE("autograd: shape ops match finite differences") {
  const Tensor x = random_tensor({2, 3, 2, 2}, 1, -1, 1), y = random_tensor({2, 1, 2, 2}, 2, -1, 1);
  CHECK(fd_error([](auto& v) { return ag::reshape(v[0], {2, 12}); }, {x}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::concat_channels({v[0], v[1]}); }, {x, y}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::slice_channels(v[0], 1, 2); }, {x}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::broadcast_spatial(v[0], 3, 2); }, {random_tensor({2, 4}, 3)}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::mean_spatial(v[0]); }, {x}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::mul_channel_mask(v[0], v[1]); }, {x, y}) < 1e-6);
}

TEST_CASE("autograd: reductions match finite differences") {
  const Tensor x = random_tensor({3, 5}, 1, -3, 3), y = random_tensor({3, 5}, 2, -1, 1);
  CHECK(fd_error([](auto& v) { return ag::sum_rows(v[0]); }, {x}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::rows_dot(v[0], v[1]); }, {x, y}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::log_softmax_rows(v[0]); }, {x}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::softmax_rows(v[0]); }, {x}) < 1e-6);
}

TEST_CASE("autograd: probabilistic terms match finite differences") {
  const Tensor x = random_tensor({2, 1, 3, 3}, 1), mean = random_tensor({2, 1, 3, 3}, 2),
               raw = random_tensor({2, 1, 3, 3}, 3, -1, 1), weight = random_tensor({2, 1, 3, 3}, 4);
  CHECK(fd_error([](auto& v) { return ag::masked_gaussian_log_prob(v[0], v[1], ag::positive_scale(v[2], 1e-4), v[3]); },
                 {x, mean, raw, weight}) < 1e-6);
  const Tensor m = random_tensor({3, 4}, 5, -1, 1), s = random_tensor({3, 4}, 6, 0.2, 2.0), z = random_tensor({3, 4}, 7);
  CHECK(fd_error([](auto& v) { return ag::kl_std_normal(v[0], v[1]); }, {m, s}) < 1e-6);
  CHECK(fd_error([](auto& v) { return ag::gaussian_log_prob_rows(v[0], v[1], v[2]); }, {z, m, s}) < 1e-6);
}

TEST_CASE("autograd: masked gaussian log-prob equals a per-pixel loop") {
  const Tensor x = random_tensor({2, 2, 3, 3}, 1), mean = random_tensor({2, 2, 3, 3}, 2),
               scale = random_tensor({2, 2, 3, 3}, 3, 0.1, 1.0);
  Tensor weight({2, 2, 3, 3});
  for (std::size_t i = 0; i < weight.numel(); i += 3) weight[i] = 1.0;
  const Tensor got = ag::masked_gaussian_log_prob(ag::constant(x), ag::constant(mean), ag::constant(scale),
                                                  ag::constant(weight))
                         .value();
  for (int n = 0; n < 2; ++n) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 18; ++i) {
      const std::size_t j = static_cast<std::size_t>(n) * 18 + i;
      if (weight[j] == 0.0) continue;
      const double r = (x[j] - mean[j]) / scale[j];
      expect += -0.5 * std::log(2 * M_PI * scale[j] * scale[j]) - 0.5 * r * r;
    }
    CHECK(got[static_cast<std::size_t>(n)] == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("autograd: straight-through forwards the hard value and the soft gradient") {
  const Tensor soft_value({1, 3}, std::vector<double>{0.2, 0.7, 0.1});
  const Tensor hard({1, 3}, std::vector<double>{0.0, 1.0, 0.0});
  const ag::Var soft = ag::parameter(soft_value);
  const ag::Var st = ag::straight_through(hard, soft, soft_value);
  CHECK(st.value() == hard);
  const ag::Var w = ag::constant(Tensor({1, 3}, std::vector<double>{1.0, 2.0, 3.0}));
  ag::backward(ag::mean_all(ag::mul(st, w)));
  CHECK(soft.grad()[0] == doctest::Approx(1.0 / 3));
  CHECK(soft.grad()[2] == doctest::Approx(1.0));
}

TEST_CASE("autograd: dedup straight-through binarizes counts with identity gradient") {
  const Tensor counts({1, 4}, std::vector<double>{0.0, 1.0, 2.0, 3.0});
  const ag::Var c = ag::parameter(counts);
  const ag::Var d = ag::dedup_straight_through(c);
  CHECK(d.value().vec() == std::vector<double>{0.0, 1.0, 1.0, 1.0});
  ag::backward(ag::mean_all(d));
  for (std::size_t i = 0; i < 4; ++i) CHECK(c.grad()[i] == doctest::Approx(0.25));
}

TEST_CASE("autograd: gradients accumulate until zero_grad and NoGradGuard disables graphs") {
  ag::Var p = ag::parameter(Tensor({1}, 2.0));
  ag::backward(ag::mean_all(ag::mul(p, p)));
  ag::backward(ag::mean_all(ag::mul(p, p)));
  CHECK(p.grad()[0] == doctest::Approx(8.0));
  p.zero_grad();
  CHECK(p.grad().empty());
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    CHECK_FALSE(ag::mul(p, p).requires_grad());
  }
  CHECK(ag::grad_enabled());
  CHECK(ag::mul(p, p).requires_grad());
}
