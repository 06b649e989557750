#include "ppsvae/kernels.hpp"

#include <Eigen/Core>
#include <vector>

namespace ppsvae {

void ConvGeometry::validate() const {
  require(in_channels >= 1 && out_channels >= 1, "conv channels must be positive");
  require(kernel >= 1 && kernel % 2 == 1, "conv kernel must be odd and positive");
  require(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0,
          "conv groups must divide channel counts");
}

namespace kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Plain left-to-right sum: Eigen reductions peel by address alignment, which
// makes the rounding depend on where the allocator put the buffer.
double row_sum(const double* p, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += p[i];
  return s;
}

void check_shapes(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  g.validate();
  require(x.rank() == 4 && x.dim(1) == g.in_channels, "conv2d input " + shape_str(x.shape()));
  require(weight.shape() == Shape{g.out_channels, g.in_channels / g.groups, g.kernel, g.kernel},
          "conv2d weight " + shape_str(weight.shape()));
}

// Padded copies of every (n, c) plane: planes x (H + 2p) x (W + 2p).
std::vector<double> pad_planes(const Tensor& x, int pad, Padding padding) {
  const int planes = x.dim(0) * x.dim(1), height = x.dim(2), width = x.dim(3);
  const int ph = height + 2 * pad, pw = width + 2 * pad;
  std::vector<double> out(static_cast<std::size_t>(planes) * ph * pw, 0.0);
  const double* src = x.data();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* s = src + static_cast<std::size_t>(p) * height * width;
    double* d = out.data() + static_cast<std::size_t>(p) * ph * pw;
    for (int i = 0; i < ph; ++i) {
      int si = i - pad;
      if (padding == Padding::Circular) {
        si = ((si % height) + height) % height;
      } else if (si < 0 || si >= height) {
        continue;
      }
      for (int j = 0; j < pw; ++j) {
        int sj = j - pad;
        if (padding == Padding::Circular) {
          sj = ((sj % width) + width) % width;
        } else if (sj < 0 || sj >= width) {
          continue;
        }
        d[i * pw + j] = s[si * width + sj];
      }
    }
  }
  return out;
}

// Adjoint of pad_planes: folds padded gradients back onto the interior.
void unpad_planes_add(const std::vector<double>& padded, int pad, Padding padding, Tensor& grad_x) {
  const int planes = grad_x.dim(0) * grad_x.dim(1), height = grad_x.dim(2), width = grad_x.dim(3);
  const int ph = height + 2 * pad, pw = width + 2 * pad;
  double* dst = grad_x.data();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* s = padded.data() + static_cast<std::size_t>(p) * ph * pw;
    double* d = dst + static_cast<std::size_t>(p) * height * width;
    for (int i = 0; i < ph; ++i) {
      int di = i - pad;
      if (padding == Padding::Circular) {
        di = ((di % height) + height) % height;
      } else if (di < 0 || di >= height) {
        continue;
      }
      for (int j = 0; j < pw; ++j) {
        int dj = j - pad;
        if (padding == Padding::Circular) {
          dj = ((dj % width) + width) % width;
        } else if (dj < 0 || dj >= width) {
          continue;
        }
        d[di * width + dj] += s[i * pw + j];
      }
    }
  }
}

void depthwise_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g,
                       Tensor& y) {
  const int n_batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int k = g.kernel, pad = k / 2, pw = width + 2 * pad, ph = height + 2 * pad;
  const std::vector<double> xp = pad_planes(x, pad, g.padding);
  y = Tensor(x.shape());
  double* out = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < channels; ++c) {
      const std::size_t plane = static_cast<std::size_t>(n) * channels + c;
      const double* src = xp.data() + plane * ph * pw;
      double* dst = out + plane * height * width;
      const double b = bias.empty() ? 0.0 : bias[c];
      for (int i = 0; i < height * width; ++i) dst[i] = b;
      const double* wk = weight.data() + static_cast<std::size_t>(c) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          for (int h = 0; h < height; ++h) {
            const double* srow = src + (h + ky) * pw + kx;
            double* drow = dst + h * width;
#pragma omp simd
            for (int w = 0; w < width; ++w) drow[w] += wv * srow[w];
          }
        }
    }
}

void depthwise_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, const ConvGeometry& g,
                        Tensor* grad_x, Tensor& grad_w, Tensor* grad_b) {
  const int n_batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int k = g.kernel, pad = k / 2, pw = width + 2 * pad, ph = height + 2 * pad;
  const std::vector<double> xp = pad_planes(x, pad, g.padding);
  grad_w = Tensor(weight.shape());
  if (grad_b) *grad_b = Tensor({channels});
  const double* gy = grad_y.data();

  // Weight and bias gradients reduce over the batch; each channel is owned by one thread.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double* gw = grad_w.data() + static_cast<std::size_t>(c) * k * k;
    double gb = 0.0;
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t plane = static_cast<std::size_t>(n) * channels + c;
      const double* src = xp.data() + plane * ph * pw;
      const double* grow = gy + plane * height * width;
      for (int i = 0; i < height * width; ++i) gb += grow[i];
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (int h = 0; h < height; ++h) {
            const double* srow = src + (h + ky) * pw + kx;
            const double* g_row = grow + h * width;
#pragma omp simd reduction(+ : acc)
            for (int w = 0; w < width; ++w) acc += g_row[w] * srow[w];
          }
          gw[ky * k + kx] += acc;
        }
    }
    if (grad_b) (*grad_b)[c] = gb;
  }

  if (!grad_x) return;
  std::vector<double> gxp(xp.size(), 0.0);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < channels; ++c) {
      const std::size_t plane = static_cast<std::size_t>(n) * channels + c;
      double* dst = gxp.data() + plane * ph * pw;
      const double* grow = gy + plane * height * width;
      const double* wk = weight.data() + static_cast<std::size_t>(c) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          for (int h = 0; h < height; ++h) {
            double* drow = dst + (h + ky) * pw + kx;
            const double* g_row = grow + h * width;
#pragma omp simd
            for (int w = 0; w < width; ++w) drow[w] += wv * g_row[w];
          }
        }
    }
  *grad_x = Tensor(x.shape());
  unpad_planes_add(gxp, pad, g.padding, *grad_x);
}

// Column matrix (Cin*k*k) x (N*H*W) built from padded planes.
std::vector<double> im2col(const std::vector<double>& xp, int n_batch, int channels, int height, int width,
                           int k) {
  const int pad = k / 2, ph = height + 2 * pad, pw = width + 2 * pad;
  const std::size_t cols = static_cast<std::size_t>(n_batch) * height * width;
  std::vector<double> col(static_cast<std::size_t>(channels) * k * k * cols);
  const int rows = channels * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k), ky = (r / k) % k, kx = r % k;
    double* dst = col.data() + static_cast<std::size_t>(r) * cols;
    for (int n = 0; n < n_batch; ++n) {
      const double* src = xp.data() + (static_cast<std::size_t>(n) * channels + c) * ph * pw;
      for (int h = 0; h < height; ++h) {
        const double* srow = src + (h + ky) * pw + kx;
        double* drow = dst + (static_cast<std::size_t>(n) * height + h) * width;
        for (int w = 0; w < width; ++w) drow[w] = srow[w];
      }
    }
  }
  return col;
}

void dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g, Tensor& y) {
  const int n_batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int k = g.kernel, cout = g.out_channels, hw = height * width;
  const int cols = n_batch * hw, rows = cin * k * k;
  const std::vector<double> col = im2col(pad_planes(x, k / 2, g.padding), n_batch, cin, height, width, k);
  y = Tensor({n_batch, cout, height, width});
  const ConstMapMat w(weight.data(), cout, rows);
  // One product per image keeps each image's result independent of its batch position.
#pragma omp parallel for schedule(static) if (n_batch > 1)
  for (int n = 0; n < n_batch; ++n) {
    MapMat out(y.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
    out.noalias() = w * ConstStridedMat(col.data() + static_cast<std::size_t>(n) * hw, rows, hw, Eigen::OuterStride<>(cols));
    if (!bias.empty())
      for (int o = 0; o < cout; ++o) out.row(o).array() += bias[o];
  }
}

void dense_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, const ConvGeometry& g,
                    Tensor* grad_x, Tensor& grad_w, Tensor* grad_b) {
  const int n_batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int k = g.kernel, pad = k / 2, cout = g.out_channels, hw = height * width;
  const int cols = n_batch * hw, rows = cin * k * k;
  const std::vector<double> col = im2col(pad_planes(x, pad, g.padding), n_batch, cin, height, width, k);

  std::vector<double> gcm(static_cast<std::size_t>(cout) * cols);
  const double* gy = grad_y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int o = 0; o < cout; ++o)
    for (int n = 0; n < n_batch; ++n) {
      const double* src = gy + (static_cast<std::size_t>(n) * cout + o) * hw;
      double* dst = gcm.data() + static_cast<std::size_t>(o) * cols + static_cast<std::size_t>(n) * hw;
      for (int i = 0; i < hw; ++i) dst[i] = src[i];
    }
  const ConstMapMat gmat(gcm.data(), cout, cols);
  grad_w = Tensor(weight.shape());
  MapMat(grad_w.data(), cout, rows).noalias() = gmat * ConstMapMat(col.data(), rows, cols).transpose();
  if (grad_b) {
    *grad_b = Tensor({cout});
    for (int o = 0; o < cout; ++o) (*grad_b)[o] = row_sum(gcm.data() + static_cast<std::size_t>(o) * cols, cols);
  }
  if (!grad_x) return;

  std::vector<double> gcol(static_cast<std::size_t>(rows) * cols);
  const ConstMapMat w(weight.data(), cout, rows);
#pragma omp parallel for schedule(static) if (n_batch > 1)
  for (int n = 0; n < n_batch; ++n)
    StridedMat(gcol.data() + static_cast<std::size_t>(n) * hw, rows, hw, Eigen::OuterStride<>(cols)).noalias() =
        w.transpose() * ConstMapMat(gy + static_cast<std::size_t>(n) * cout * hw, cout, hw);
  const int ph = height + 2 * pad, pw = width + 2 * pad;
  std::vector<double> gxp(static_cast<std::size_t>(n_batch) * cin * ph * pw, 0.0);
  // col2im: rows of one input channel all land in that channel's planes.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int r = (c * k + ky) * k + kx;
        const double* src = gcol.data() + static_cast<std::size_t>(r) * cols;
        for (int n = 0; n < n_batch; ++n) {
          double* dst = gxp.data() + (static_cast<std::size_t>(n) * cin + c) * ph * pw;
          for (int h = 0; h < height; ++h) {
            double* drow = dst + (h + ky) * pw + kx;
            const double* srow = src + (static_cast<std::size_t>(n) * height + h) * width;
            for (int w = 0; w < width; ++w) drow[w] += srow[w];
          }
        }
      }
  *grad_x = Tensor(x.shape());
  unpad_planes_add(gxp, pad, g.padding, *grad_x);
}

// 1x1 kernels need no padding or column matrix: every batch element is a
// single (Cout x Cin) * (Cin x HW) product straight out of NCHW storage.
void pointwise_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g, Tensor& y) {
  const int n_batch = x.dim(0), cin = x.dim(1), hw = x.dim(2) * x.dim(3), cout = g.out_channels;
  y = Tensor({n_batch, cout, x.dim(2), x.dim(3)});
  const ConstMapMat w(weight.data(), cout, cin);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < n_batch; ++n) {
    MapMat out(y.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
    out.noalias() = w * ConstMapMat(x.data() + static_cast<std::size_t>(n) * cin * hw, cin, hw);
    if (!bias.empty())
      for (int o = 0; o < cout; ++o) out.row(o).array() += bias[o];
  }
}

void pointwise_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, const ConvGeometry& g,
                        Tensor* grad_x, Tensor& grad_w, Tensor* grad_b) {
  const int n_batch = x.dim(0), cin = x.dim(1), hw = x.dim(2) * x.dim(3), cout = g.out_channels;
  grad_w = Tensor(weight.shape());
  MapMat gw(grad_w.data(), cout, cin);
  if (grad_b) *grad_b = Tensor({cout});
  // Batch order is fixed so the weight-gradient sum does not depend on threading.
  for (int n = 0; n < n_batch; ++n) {
    const ConstMapMat gy(grad_y.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
    gw.noalias() += gy * ConstMapMat(x.data() + static_cast<std::size_t>(n) * cin * hw, cin, hw).transpose();
    if (grad_b)
      for (int o = 0; o < cout; ++o)
        (*grad_b)[o] += row_sum(grad_y.data() + (static_cast<std::size_t>(n) * cout + o) * hw, hw);
  }
  if (!grad_x) return;
  *grad_x = Tensor(x.shape());
  const ConstMapMat w(weight.data(), cout, cin);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < n_batch; ++n)
    MapMat(grad_x->data() + static_cast<std::size_t>(n) * cin * hw, cin, hw).noalias() =
        w.transpose() * ConstMapMat(grad_y.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g,
                    Tensor& y) {
  check_shapes(x, weight, g);
  if (g.groups == 1 && g.kernel == 1) {
    pointwise_forward(x, weight, bias, g, y);
  } else if (g.groups == 1) {
    dense_forward(x, weight, bias, g, y);
  } else if (g.depthwise()) {
    depthwise_forward(x, weight, bias, g, y);
  } else {
    reference::conv2d_forward(x, weight, bias, g, y);
  }
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, const ConvGeometry& g,
                     Tensor* grad_x, Tensor& grad_w, Tensor* grad_b) {
  check_shapes(x, weight, g);
  require(grad_y.shape() == Shape({x.dim(0), g.out_channels, x.dim(2), x.dim(3)}), "conv2d grad_y shape");
  if (g.groups == 1 && g.kernel == 1) {
    pointwise_backward(x, weight, grad_y, g, grad_x, grad_w, grad_b);
  } else if (g.groups == 1) {
    dense_backward(x, weight, grad_y, g, grad_x, grad_w, grad_b);
  } else if (g.depthwise()) {
    depthwise_backward(x, weight, grad_y, g, grad_x, grad_w, grad_b);
  } else {
    reference::conv2d_backward(x, weight, grad_y, g, grad_x, grad_w, grad_b);
  }
}

void matmul(const double* a, const double* b, double* out, int rows, int inner, int cols_b) {
  MapMat(out, rows, cols_b).noalias() = ConstMapMat(a, rows, inner) * ConstMapMat(b, inner, cols_b);
}

void matmul_tn(const double* a, const double* b, double* out, int rows, int inner, int cols_b) {
  MapMat(out, rows, cols_b).noalias() = ConstMapMat(a, inner, rows).transpose() * ConstMapMat(b, inner, cols_b);
}

void matmul_nt(const double* a, const double* b, double* out, int rows, int inner, int cols_b) {
  MapMat(out, rows, cols_b).noalias() = ConstMapMat(a, rows, inner) * ConstMapMat(b, cols_b, inner).transpose();
}

}  // namespace kernels
}  // namespace ppsvae
