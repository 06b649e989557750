#pragma once

#include "ppsvae/tensor.hpp"

namespace ppsvae {

enum class Padding { Zero, Circular };

/// Stride-1 "same" convolution over N x C x H x W inputs.
/// Weights are Cout x (Cin / groups) x k x k; bias is Cout or empty.
struct ConvGeometry {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;  // odd
  int groups = 1;
  Padding padding = Padding::Zero;

  bool depthwise() const { return groups == in_channels && groups == out_channels && groups > 1; }
  void validate() const;
};

namespace kernels {

// OpenMP versions used by the autograd ops. Dense convolutions (groups == 1)
// go through im2col + GEMM; depthwise convolutions use direct loops. Other
// group counts fall back to the reference implementation.
void conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g,
                    Tensor& y);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, const ConvGeometry& g,
                     Tensor* grad_x, Tensor& grad_w, Tensor* grad_b);

/// out (rows x cols_b) = a (rows x inner) * b (inner x cols_b), row-major.
void matmul(const double* a, const double* b, double* out, int rows, int inner, int cols_b);
/// out = a^T * b where a is inner x rows.
void matmul_tn(const double* a, const double* b, double* out, int rows, int inner, int cols_b);
/// out = a * b^T where b is cols_b x inner.
void matmul_nt(const double* a, const double* b, double* out, int rows, int inner, int cols_b);

}  // namespace kernels

namespace kernels::reference {

// Plain serial loops, kept as the test oracle for the parallel kernels.
void conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g,
                    Tensor& y);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, const ConvGeometry& g,
                     Tensor* grad_x, Tensor& grad_w, Tensor* grad_b);
void matmul(const double* a, const double* b, double* out, int rows, int inner, int cols_b);

}  // namespace kernels::reference

}  // namespace ppsvae
