#include "ppsvae/kernels.hpp"

namespace ppsvae::kernels::reference {
namespace {

// Maps an unpadded source coordinate; returns -1 when it falls in zero padding.
int source_index(int i, int extent, Padding padding) {
  if (i >= 0 && i < extent) return i;
  if (padding == Padding::Zero) return -1;
  return ((i % extent) + extent) % extent;
}

void check_shapes(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  g.validate();
  require(x.rank() == 4 && x.dim(1) == g.in_channels, "conv2d input " + shape_str(x.shape()));
  require(weight.shape() == Shape{g.out_channels, g.in_channels / g.groups, g.kernel, g.kernel},
          "conv2d weight " + shape_str(weight.shape()));
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g,
                    Tensor& y) {
  check_shapes(x, weight, g);
  const int n_batch = x.dim(0), height = x.dim(2), width = x.dim(3);
  const int cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
  const int pad = g.kernel / 2;
  y = Tensor({n_batch, g.out_channels, height, width});
  for (int n = 0; n < n_batch; ++n)
    for (int o = 0; o < g.out_channels; ++o) {
      const int group = o / cout_g;
      for (int h = 0; h < height; ++h)
        for (int w = 0; w < width; ++w) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int ci = 0; ci < cin_g; ++ci) {
            const int c = group * cin_g + ci;
            for (int ky = 0; ky < g.kernel; ++ky) {
              const int sh = source_index(h + ky - pad, height, g.padding);
              if (sh < 0) continue;
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int sw = source_index(w + kx - pad, width, g.padding);
                if (sw < 0) continue;
                acc += weight.at(o, ci, ky, kx) * x.at(n, c, sh, sw);
              }
            }
          }
          y.at(n, o, h, w) = acc;
        }
    }
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, const ConvGeometry& g,
                     Tensor* grad_x, Tensor& grad_w, Tensor* grad_b) {
  check_shapes(x, weight, g);
  const int n_batch = x.dim(0), height = x.dim(2), width = x.dim(3);
  const int cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
  const int pad = g.kernel / 2;
  if (grad_x) *grad_x = Tensor(x.shape());
  grad_w = Tensor(weight.shape());
  if (grad_b) *grad_b = Tensor({g.out_channels});
  for (int n = 0; n < n_batch; ++n)
    for (int o = 0; o < g.out_channels; ++o) {
      const int group = o / cout_g;
      for (int h = 0; h < height; ++h)
        for (int w = 0; w < width; ++w) {
          const double gy = grad_y.at(n, o, h, w);
          if (grad_b) (*grad_b)[o] += gy;
          for (int ci = 0; ci < cin_g; ++ci) {
            const int c = group * cin_g + ci;
            for (int ky = 0; ky < g.kernel; ++ky) {
              const int sh = source_index(h + ky - pad, height, g.padding);
              if (sh < 0) continue;
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int sw = source_index(w + kx - pad, width, g.padding);
                if (sw < 0) continue;
                grad_w.at(o, ci, ky, kx) += gy * x.at(n, c, sh, sw);
                if (grad_x) grad_x->at(n, c, sh, sw) += gy * weight.at(o, ci, ky, kx);
              }
            }
          }
        }
    }
}

void matmul(const double* a, const double* b, double* out, int rows, int inner, int cols_b) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols_b; ++j) {
      double acc = 0.0;
      for (int k = 0; k < inner; ++k) acc += a[i * inner + k] * b[k * cols_b + j];
      out[i * cols_b + j] = acc;
    }
}

}  // namespace ppsvae::kernels::reference
