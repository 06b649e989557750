#include <doctest.h>

#include "helpers.hpp"
#include "ppsvae/kernels.hpp"

using namespace ppsvae;
using testing::random_tensor;

namespace {

struct ConvCase {
  int n, cin, cout, k, groups, h, w;
  Padding padding;
};

void check_conv_matches_reference(const ConvCase& c, std::uint64_t seed) {
  ConvGeometry g;
  g.in_channels = c.cin;
  g.out_channels = c.cout;
  g.kernel = c.k;
  g.groups = c.groups;
  g.padding = c.padding;
  const Tensor x = random_tensor({c.n, c.cin, c.h, c.w}, seed, -1, 1);
  const Tensor w = random_tensor({c.cout, c.cin / c.groups, c.k, c.k}, seed + 1, -1, 1);
  const Tensor b = random_tensor({c.cout}, seed + 2, -1, 1);
  const Tensor gy = random_tensor({c.n, c.cout, c.h, c.w}, seed + 3, -1, 1);

  Tensor y_fast, y_ref;
  kernels::conv2d_forward(x, w, b, g, y_fast);
  kernels::reference::conv2d_forward(x, w, b, g, y_ref);
  CHECK(max_abs_diff(y_fast, y_ref) < 1e-12);

  Tensor gx_fast(x.shape()), gx_ref(x.shape()), gw_fast(w.shape()), gw_ref(w.shape()), gb_fast(b.shape()),
      gb_ref(b.shape());
  kernels::conv2d_backward(x, w, gy, g, &gx_fast, gw_fast, &gb_fast);
  kernels::reference::conv2d_backward(x, w, gy, g, &gx_ref, gw_ref, &gb_ref);
  CHECK(max_abs_diff(gx_fast, gx_ref) < 1e-11);
  CHECK(max_abs_diff(gw_fast, gw_ref) < 1e-11);
  CHECK(max_abs_diff(gb_fast, gb_ref) < 1e-11);
}

}  // namespace

TEST_CASE("conv2d: parallel kernels agree with the serial reference") {
  const ConvCase cases[] = {
      {2, 3, 5, 3, 1, 7, 6, Padding::Zero},      // dense
      {2, 3, 5, 3, 1, 7, 6, Padding::Circular},
      {3, 4, 6, 1, 1, 5, 5, Padding::Zero},      // pointwise
      {1, 4, 4, 7, 4, 9, 8, Padding::Zero},      // depthwise
      {2, 4, 4, 5, 4, 6, 6, Padding::Circular},
      {2, 4, 6, 3, 2, 5, 4, Padding::Zero},      // grouped: reference fallback
      {1, 1, 1, 3, 1, 1, 1, Padding::Zero},      // 1x1 image with padding
      {1, 2, 2, 5, 2, 3, 3, Padding::Circular},  // kernel wider than the image
  };
  std::uint64_t seed = 100;
  for (const ConvCase& c : cases) {
    CAPTURE(c.cin);
    CAPTURE(c.k);
    CAPTURE(c.groups);
    check_conv_matches_reference(c, seed += 10);
  }
}

TEST_CASE("conv2d: empty bias means no bias") {
  ConvGeometry g;
  g.in_channels = 2;
  g.out_channels = 3;
  g.kernel = 3;
  const Tensor x = random_tensor({1, 2, 4, 4}, 1);
  const Tensor w = random_tensor({3, 2, 3, 3}, 2);
  Tensor y1, y2;
  kernels::conv2d_forward(x, w, Tensor(), g, y1);
  kernels::conv2d_forward(x, w, Tensor({3}), g, y2);
  CHECK(y1 == y2);
}

TEST_CASE("conv2d: shape and geometry violations") {
  ConvGeometry g;
  g.in_channels = 2;
  g.out_channels = 2;
  g.kernel = 2;  // even
  Tensor y;
  CHECK_THROWS_AS(kernels::conv2d_forward(Tensor({1, 2, 4, 4}), Tensor({2, 2, 2, 2}), Tensor(), g, y),
                  ContractViolation);
  g.kernel = 3;
  CHECK_THROWS_AS(kernels::conv2d_forward(Tensor({1, 3, 4, 4}), Tensor({2, 2, 3, 3}), Tensor(), g, y),
                  ContractViolation);
}

TEST_CASE("conv2d: circular padding commutes with circular shifts") {
  ConvGeometry g;
  g.in_channels = 2;
  g.out_channels = 3;
  g.kernel = 5;
  g.padding = Padding::Circular;
  const int h = 6, w = 7;
  const Tensor x = random_tensor({1, 2, h, w}, 3);
  const Tensor wt = random_tensor({3, 2, 5, 5}, 4, -1, 1);
  auto shift = [&](const Tensor& t, int dy, int dx) {
    Tensor out(t.shape());
    for (int c = 0; c < t.dim(1); ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) out.at(0, c, (i + dy) % h, (j + dx) % w) = t.at(0, c, i, j);
    return out;
  };
  Tensor y, ys;
  kernels::conv2d_forward(x, wt, Tensor(), g, y);
  kernels::conv2d_forward(shift(x, 2, 3), wt, Tensor(), g, ys);
  CHECK(max_abs_diff(ys, shift(y, 2, 3)) < 1e-12);
}

TEST_CASE("matmul: all variants agree with the reference product") {
  const int rows = 13, inner = 17, cols = 11;
  const Tensor a = random_tensor({rows, inner}, 5, -1, 1);
  const Tensor b = random_tensor({inner, cols}, 6, -1, 1);
  Tensor ref({rows, cols}), out({rows, cols});
  kernels::reference::matmul(a.data(), b.data(), ref.data(), rows, inner, cols);
  kernels::matmul(a.data(), b.data(), out.data(), rows, inner, cols);
  CHECK(max_abs_diff(out, ref) < 1e-12);

  Tensor at({inner, rows}), bt({cols, inner});
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < inner; ++k) at[static_cast<std::size_t>(k * rows + i)] = a[static_cast<std::size_t>(i * inner + k)];
  for (int k = 0; k < inner; ++k)
    for (int j = 0; j < cols; ++j) bt[static_cast<std::size_t>(j * inner + k)] = b[static_cast<std::size_t>(k * cols + j)];
  Tensor tn({rows, cols}), nt({rows, cols});
  kernels::matmul_tn(at.data(), b.data(), tn.data(), rows, inner, cols);
  kernels::matmul_nt(a.data(), bt.data(), nt.data(), rows, inner, cols);
  CHECK(max_abs_diff(tn, ref) < 1e-12);
  CHECK(max_abs_diff(nt, ref) < 1e-12);
}

TEST_CASE("matmul: small hand-computed product") {
  const double a[] = {1, 2, 3, 4};
  const double b[] = {5, 6, 7, 8};
  double out[4];
  kernels::matmul(a, b, out, 2, 2, 2);
  CHECK(out[0] == 19);
  CHECK(out[1] == 22);
  CHECK(out[2] == 43);
  CHECK(out[3] == 50);
}

TEST_CASE("tensor: shapes, reshape, slicing and stacking") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(sum(t) == 9.0);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), ContractViolation);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ContractViolation);

  Tensor x = random_tensor({3, 1, 2, 2}, 9);
  const Tensor s = x.slice_batch(1);
  CHECK(s.shape() == Shape{1, 1, 2, 2});
  CHECK(s[0] == x.at(1, 0, 0, 0));
  CHECK_THROWS_AS(x.slice_batch(3), ContractViolation);

  const Tensor stacked = stack_batch({x.slice_batch(0), x.slice_batch(1), x.slice_batch(2)});
  CHECK(stacked == x);
  const Tensor from_items = stack_batch({Tensor({2, 2}, 1.0), Tensor({2, 2}, 2.0)});
  CHECK(from_items.shape() == Shape{2, 2, 2});
  CHECK_THROWS_AS(stack_batch({Tensor({2}), Tensor({3})}), ContractViolation);

  Tensor y({2}, std::vector<double>{1.0, 2.0});
  y.add_(Tensor({2}, std::vector<double>{0.5, 0.5}));
  y.scale_(2.0);
  CHECK(y.vec() == std::vector<double>{3.0, 5.0});
  CHECK(all_finite(y));
  y[0] = std::nan("");
  CHECK_FALSE(all_finite(y));
}
