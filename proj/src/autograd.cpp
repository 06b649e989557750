#include "ppsvae/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace ppsvae::ag {
namespace {

thread_local bool g_grad_enabled = true;

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

void accumulate(Node& node, const Tensor& g) {
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = g;
  } else {
    node.grad.add_(g);
  }
}

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

void check_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t row_len(const Tensor& t) { return t.numel() / static_cast<std::size_t>(t.dim(0)); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  require(root.defined() && root.value().numel() == 1, "backward needs a scalar root");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  accumulate(*root.node(), Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
    // Interior gradients are not needed after propagation.
    if (node->backward) node->grad = Tensor();
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor v = a.value();
  v.add_(b.value());
  return make(std::move(v), {a, b}, [](Node& self) {
    accumulate(in(self, 0), self.grad);
    accumulate(in(self, 1), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Tensor v = a.value();
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] -= b.value()[i];
  return make(std::move(v), {a, b}, [](Node& self) {
    accumulate(in(self, 0), self.grad);
    Tensor g = self.grad;
    g.scale_(-1.0);
    accumulate(in(self, 1), g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor v = a.value();
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] *= b.value()[i];
  return make(std::move(v), {a, b}, [](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    if (na.requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= nb.value[i];
      accumulate(na, g);
    }
    if (nb.requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= na.value[i];
      accumulate(nb, g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor v = a.value();
  v.scale_(s);
  return make(std::move(v), {a}, [s](Node& self) {
    Tensor g = self.grad;
    g.scale_(s);
    accumulate(in(self, 0), g);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor v = a.value();
  for (double& x : v.span()) x += s;
  return make(std::move(v), {a}, [](Node& self) { accumulate(in(self, 0), self.grad); });
}

Var one_minus(const Var& a) {
  Tensor v = a.value();
  for (double& x : v.span()) x = 1.0 - x;
  return make(std::move(v), {a}, [](Node& self) {
    Tensor g = self.grad;
    g.scale_(-1.0);
    accumulate(in(self, 0), g);
  });
}

Var leaky_relu(const Var& x, double negative_slope) {
  Tensor v = x.value();
  for (double& e : v.span()) e = e > 0 ? e : negative_slope * e;
  return make(std::move(v), {x}, [negative_slope](Node& self) {
    Node& nx = in(self, 0);
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (nx.value[i] <= 0) g[i] *= negative_slope;
    accumulate(nx, g);
  });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var positive_scale(const Var& x, double floor) {
  Tensor v = x.value();
  for (double& e : v.span()) e = softplus(e) + floor;
  return make(std::move(v), {x}, [](Node& self) {
    Node& nx = in(self, 0);
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= sigmoid(nx.value[i]);
    accumulate(nx, g);
  });
}

Var exp(const Var& x) {
  Tensor v = x.value();
  for (double& e : v.span()) e = std::exp(e);
  return make(v, {x}, [v](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= v[i];
    accumulate(in(self, 0), g);
  });
}

// ---------------------------------------------------------------- layers

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
  Tensor y;
  const Tensor no_bias;
  kernels::conv2d_forward(x.value(), weight.value(), bias.defined() ? bias.value() : no_bias, g, y);
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make(std::move(y), std::move(inputs), [g](Node& self) {
    Node& nx = in(self, 0);
    Node& nw = in(self, 1);
    Node* nb = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    Tensor gx, gw, gb;
    kernels::conv2d_backward(nx.value, nw.value, self.grad, g, nx.requires_grad ? &gx : nullptr, gw,
                             nb && nb->requires_grad ? &gb : nullptr);
    if (nx.requires_grad) accumulate(nx, gx);
    accumulate(nw, gw);
    if (nb && nb->requires_grad) accumulate(*nb, gb);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x.value().rank() == 2 && weight.value().rank() == 2 && x.dim(1) == weight.dim(1),
          "linear: x " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
  const int n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  Tensor y({n, o});
  kernels::matmul_nt(x.value().data(), weight.value().data(), y.data(), n, f, o);
  if (bias.defined()) {
    require(bias.value().numel() == static_cast<std::size_t>(o), "linear bias size");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < o; ++j) y[static_cast<std::size_t>(i) * o + j] += bias.value()[j];
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make(std::move(y), std::move(inputs), [n, f, o](Node& self) {
    Node& nx = in(self, 0);
    Node& nw = in(self, 1);
    if (nx.requires_grad) {
      Tensor gx({n, f});
      kernels::matmul(self.grad.data(), nw.value.data(), gx.data(), n, o, f);
      accumulate(nx, gx);
    }
    if (nw.requires_grad) {
      Tensor gw({o, f});
      kernels::matmul_tn(self.grad.data(), nx.value.data(), gw.data(), o, n, f);
      accumulate(nw, gw);
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor gb({o});
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) gb[j] += self.grad[static_cast<std::size_t>(i) * o + j];
      accumulate(*self.inputs[2], gb);
    }
  });
}

Var channel_layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "channel_layer_norm expects N x C x H x W");
  const int n_batch = xv.dim(0), channels = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  require(gain.value().numel() == static_cast<std::size_t>(channels) &&
              bias.value().numel() == static_cast<std::size_t>(channels),
          "channel_layer_norm gain/bias size");
  Tensor xhat(xv.shape());
  Tensor inv_std({n_batch, hw});
  Tensor y(xv.shape());
#pragma omp parallel for schedule(static)
  for (int n = 0; n < n_batch; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * channels * hw;
    for (int p = 0; p < hw; ++p) {
      double mean = 0.0;
      for (int c = 0; c < channels; ++c) mean += xv[base + c * hw + p];
      mean /= channels;
      double var = 0.0;
      for (int c = 0; c < channels; ++c) {
        const double d = xv[base + c * hw + p] - mean;
        var += d * d;
      }
      var /= channels;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(n) * hw + p] = inv;
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = base + c * hw + p;
        xhat[i] = (xv[i] - mean) * inv;
        y[i] = gain.value()[c] * xhat[i] + bias.value()[c];
      }
    }
  }
  return make(std::move(y), {x, gain, bias}, [xhat, inv_std, n_batch, channels, hw](Node& self) {
    Node& nx = in(self, 0);
    Node& ng = in(self, 1);
    Node& nb = in(self, 2);
    const Tensor& g = self.grad;
    const Tensor& gain_v = ng.value;
    Tensor ggain({channels}), gbias({channels});
    for (int n = 0; n < n_batch; ++n)
      for (int c = 0; c < channels; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * hw;
        for (int p = 0; p < hw; ++p) {
          ggain[c] += g[base + p] * xhat[base + p];
          gbias[c] += g[base + p];
        }
      }
    accumulate(ng, ggain);
    accumulate(nb, gbias);
    if (!nx.requires_grad) return;
    Tensor gx(nx.value.shape());
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * channels * hw;
      for (int p = 0; p < hw; ++p) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (int c = 0; c < channels; ++c) {
          const std::size_t i = base + c * hw + p;
          const double gh = g[i] * gain_v[c];
          mean_g += gh;
          mean_gx += gh * xhat[i];
        }
        mean_g /= channels;
        mean_gx /= channels;
        const double inv = inv_std[static_cast<std::size_t>(n) * hw + p];
        for (int c = 0; c < channels; ++c) {
          const std::size_t i = base + c * hw + p;
          gx[i] = inv * (g[i] * gain_v[c] - mean_g - xhat[i] * mean_gx);
        }
      }
    }
    accumulate(nx, gx);
  });
}

Var avg_pool2(const Var& x) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4 && xv.dim(2) % 2 == 0 && xv.dim(3) % 2 == 0, "avg_pool2 needs even H, W");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3), oh = h / 2, ow = w / 2;
  Tensor y({xv.dim(0), xv.dim(1), oh, ow});
  for (int p = 0; p < planes; ++p)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const std::size_t s = (static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j;
        y[(static_cast<std::size_t>(p) * oh + i) * ow + j] = 0.25 * (xv[s] + xv[s + 1] + xv[s + w] + xv[s + w + 1]);
      }
  return make(std::move(y), {x}, [planes, h, w, oh, ow](Node& self) {
    Node& nx = in(self, 0);
    Tensor gx(nx.value.shape());
    for (int p = 0; p < planes; ++p)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const double g = 0.25 * self.grad[(static_cast<std::size_t>(p) * oh + i) * ow + j];
          const std::size_t s = (static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j;
          gx[s] += g;
          gx[s + 1] += g;
          gx[s + w] += g;
          gx[s + w + 1] += g;
        }
    accumulate(nx, gx);
  });
}

// ---------------------------------------------------------------- shape

Var reshape(const Var& x, Shape shape) {
  Tensor v = x.value().reshaped(std::move(shape));
  Shape original = x.shape();
  return make(std::move(v), {x}, [original](Node& self) { accumulate(in(self, 0), self.grad.reshaped(original)); });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels of nothing");
  const Shape& s0 = parts.front().shape();
  require(s0.size() == 4, "concat_channels expects 4-D values");
  int total = 0;
  for (const auto& p : parts) {
    require(p.shape().size() == 4 && p.dim(0) == s0[0] && p.dim(2) == s0[2] && p.dim(3) == s0[3],
            "concat_channels shape mismatch " + shape_str(p.shape()));
    total += p.dim(1);
  }
  const int n_batch = s0[0], hw = s0[2] * s0[3];
  Tensor y({n_batch, total, s0[2], s0[3]});
  std::vector<int> widths;
  int offset = 0;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    widths.push_back(c);
    for (int n = 0; n < n_batch; ++n)
      std::copy_n(p.value().data() + static_cast<std::size_t>(n) * c * hw, static_cast<std::size_t>(c) * hw,
                  y.data() + (static_cast<std::size_t>(n) * total + offset) * hw);
    offset += c;
  }
  return make(std::move(y), parts, [widths, n_batch, total, hw](Node& self) {
    int off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& nk = in(self, k);
      const int c = widths[k];
      if (nk.requires_grad) {
        Tensor g(nk.value.shape());
        for (int n = 0; n < n_batch; ++n)
          std::copy_n(self.grad.data() + (static_cast<std::size_t>(n) * total + off) * hw,
                      static_cast<std::size_t>(c) * hw, g.data() + static_cast<std::size_t>(n) * c * hw);
        accumulate(nk, g);
      }
      off += c;
    }
  });
}

Var slice_channels(const Var& x, int start, int count) {
  const Shape& s = x.shape();
  require(s.size() == 4 && start >= 0 && count >= 1 && start + count <= s[1], "slice_channels range");
  const int n_batch = s[0], total = s[1], hw = s[2] * s[3];
  Tensor y({n_batch, count, s[2], s[3]});
  for (int n = 0; n < n_batch; ++n)
    std::copy_n(x.value().data() + (static_cast<std::size_t>(n) * total + start) * hw,
                static_cast<std::size_t>(count) * hw, y.data() + static_cast<std::size_t>(n) * count * hw);
  return make(std::move(y), {x}, [n_batch, total, hw, start, count](Node& self) {
    Node& nx = in(self, 0);
    Tensor g(nx.value.shape());
    for (int n = 0; n < n_batch; ++n)
      std::copy_n(self.grad.data() + static_cast<std::size_t>(n) * count * hw, static_cast<std::size_t>(count) * hw,
                  g.data() + (static_cast<std::size_t>(n) * total + start) * hw);
    accumulate(nx, g);
  });
}

Var broadcast_spatial(const Var& a, int height, int width) {
  require(a.value().rank() == 2, "broadcast_spatial expects N x D");
  require(height >= 1 && width >= 1, "broadcast_spatial needs positive H, W");
  const int n_batch = a.dim(0), d = a.dim(1), hw = height * width;
  Tensor y({n_batch, d, height, width});
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < d; ++c)
      std::fill_n(y.data() + (static_cast<std::size_t>(n) * d + c) * hw, hw,
                  a.value()[static_cast<std::size_t>(n) * d + c]);
  return make(std::move(y), {a}, [n_batch, d, hw](Node& self) {
    Tensor g({n_batch, d});
    for (int i = 0; i < n_batch * d; ++i) {
      double acc = 0.0;
      const double* src = self.grad.data() + static_cast<std::size_t>(i) * hw;
      for (int p = 0; p < hw; ++p) acc += src[p];
      g[i] = acc;
    }
    accumulate(in(self, 0), g);
  });
}

Var mean_spatial(const Var& x) {
  require(x.value().rank() == 4, "mean_spatial expects N x C x H x W");
  const int n_batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n_batch, c});
  for (int i = 0; i < n_batch * c; ++i) {
    double acc = 0.0;
    const double* src = x.value().data() + static_cast<std::size_t>(i) * hw;
    for (int p = 0; p < hw; ++p) acc += src[p];
    y[i] = acc / hw;
  }
  return make(std::move(y), {x}, [n_batch, c, hw](Node& self) {
    Node& nx = in(self, 0);
    Tensor g(nx.value.shape());
    for (int i = 0; i < n_batch * c; ++i)
      std::fill_n(g.data() + static_cast<std::size_t>(i) * hw, hw, self.grad[i] / hw);
    accumulate(nx, g);
  });
}

Var mul_channel_mask(const Var& y, const Var& mask) {
  const Shape& s = y.shape();
  require(s.size() == 4 && mask.shape() == Shape({s[0], 1, s[2], s[3]}),
          "mul_channel_mask: y " + shape_str(s) + " mask " + shape_str(mask.shape()));
  const int n_batch = s[0], c = s[1], hw = s[2] * s[3];
  Tensor out(s);
  for (int n = 0; n < n_batch; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p) {
        const std::size_t i = (static_cast<std::size_t>(n) * c + ch) * hw + p;
        out[i] = y.value()[i] * mask.value()[static_cast<std::size_t>(n) * hw + p];
      }
  return make(std::move(out), {y, mask}, [n_batch, c, hw](Node& self) {
    Node& ny = in(self, 0);
    Node& nm = in(self, 1);
    Tensor gy(ny.value.shape()), gm(nm.value.shape());
    for (int n = 0; n < n_batch; ++n)
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = (static_cast<std::size_t>(n) * c + ch) * hw + p;
          const std::size_t m = static_cast<std::size_t>(n) * hw + p;
          gy[i] = self.grad[i] * nm.value[m];
          gm[m] += self.grad[i] * ny.value[i];
        }
    if (ny.requires_grad) accumulate(ny, gy);
    if (nm.requires_grad) accumulate(nm, gm);
  });
}

Var sum_list(const std::vector<Var>& parts) {
  require(!parts.empty(), "sum_list of nothing");
  Tensor v = parts.front().value();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    require(parts[k].shape() == v.shape(), "sum_list shape mismatch");
    v.add_(parts[k].value());
  }
  return make(std::move(v), parts, [](Node& self) {
    for (auto& p : self.inputs) accumulate(*p, self.grad);
  });
}

// ---------------------------------------------------------------- reductions

Var sum_rows(const Var& x) {
  const Tensor& v = x.value();
  require(v.rank() >= 1, "sum_rows of scalar");
  const int n_batch = v.dim(0);
  const std::size_t len = row_len(v);
  Tensor y({n_batch});
  for (int n = 0; n < n_batch; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += v[n * len + i];
    y[n] = acc;
  }
  return make(std::move(y), {x}, [n_batch, len](Node& self) {
    Node& nx = in(self, 0);
    Tensor g(nx.value.shape());
    for (int n = 0; n < n_batch; ++n)
      for (std::size_t i = 0; i < len; ++i) g[n * len + i] = self.grad[n];
    accumulate(nx, g);
  });
}

Var rows_dot(const Var& a, const Var& b) {
  check_same(a, b, "rows_dot");
  const int n_batch = a.dim(0);
  const std::size_t len = row_len(a.value());
  Tensor y({n_batch});
  for (int n = 0; n < n_batch; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += a.value()[n * len + i] * b.value()[n * len + i];
    y[n] = acc;
  }
  return make(std::move(y), {a, b}, [n_batch, len](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    if (na.requires_grad) {
      Tensor g(na.value.shape());
      for (int n = 0; n < n_batch; ++n)
        for (std::size_t i = 0; i < len; ++i) g[n * len + i] = self.grad[n] * nb.value[n * len + i];
      accumulate(na, g);
    }
    if (nb.requires_grad) {
      Tensor g(nb.value.shape());
      for (int n = 0; n < n_batch; ++n)
        for (std::size_t i = 0; i < len; ++i) g[n * len + i] = self.grad[n] * na.value[n * len + i];
      accumulate(nb, g);
    }
  });
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  require(n > 0, "mean_all of empty value");
  Tensor y({1}, sum(x.value()) / n);
  return make(std::move(y), {x}, [n](Node& self) {
    Node& nx = in(self, 0);
    accumulate(nx, Tensor(nx.value.shape(), self.grad[0] / n));
  });
}

Var log_softmax_rows(const Var& x) {
  const Tensor& v = x.value();
  require(v.rank() == 2, "log_softmax_rows expects N x K");
  const int n_batch = v.dim(0), k = v.dim(1);
  Tensor y(v.shape());
  Tensor p(v.shape());
  for (int n = 0; n < n_batch; ++n) {
    const double* row = v.data() + static_cast<std::size_t>(n) * k;
    const double m = *std::max_element(row, row + k);
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += std::exp(row[i] - m);
    const double lse = m + std::log(s);
    for (int i = 0; i < k; ++i) {
      y[static_cast<std::size_t>(n) * k + i] = row[i] - lse;
      p[static_cast<std::size_t>(n) * k + i] = std::exp(row[i] - lse);
    }
  }
  return make(std::move(y), {x}, [p, n_batch, k](Node& self) {
    Tensor g(p.shape());
    for (int n = 0; n < n_batch; ++n) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += self.grad[static_cast<std::size_t>(n) * k + i];
      for (int i = 0; i < k; ++i) {
        const std::size_t j = static_cast<std::size_t>(n) * k + i;
        g[j] = self.grad[j] - p[j] * s;
      }
    }
    accumulate(in(self, 0), g);
  });
}

Var softmax_rows(const Var& x) {
  const Tensor& v = x.value();
  require(v.rank() == 2, "softmax_rows expects N x K");
  const int n_batch = v.dim(0), k = v.dim(1);
  Tensor p(v.shape());
  for (int n = 0; n < n_batch; ++n) {
    const double* row = v.data() + static_cast<std::size_t>(n) * k;
    const double m = *std::max_element(row, row + k);
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += std::exp(row[i] - m);
    for (int i = 0; i < k; ++i) p[static_cast<std::size_t>(n) * k + i] = std::exp(row[i] - m) / s;
  }
  return make(p, {x}, [p, n_batch, k](Node& self) {
    Tensor g(p.shape());
    for (int n = 0; n < n_batch; ++n) {
      double dot = 0.0;
      for (int i = 0; i < k; ++i) {
        const std::size_t j = static_cast<std::size_t>(n) * k + i;
        dot += self.grad[j] * p[j];
      }
      for (int i = 0; i < k; ++i) {
        const std::size_t j = static_cast<std::size_t>(n) * k + i;
        g[j] = p[j] * (self.grad[j] - dot);
      }
    }
    accumulate(in(self, 0), g);
  });
}

// ---------------------------------------------------------------- probabilistic

Var masked_gaussian_log_prob(const Var& x, const Var& mean, const Var& scale, const Var& weight) {
  check_same(x, mean, "masked_gaussian_log_prob");
  check_same(x, scale, "masked_gaussian_log_prob");
  const Shape& s = x.shape();
  require(s.size() == 4, "masked_gaussian_log_prob expects N x C x H x W");
  const int n_batch = s[0], c = s[1], hw = s[2] * s[3];
  const bool shared_weight = weight.shape() == Shape({n_batch, 1, s[2], s[3]});
  require(shared_weight || weight.shape() == s, "masked_gaussian_log_prob weight shape " + shape_str(weight.shape()));
  auto widx = [=](std::size_t i) {
    if (!shared_weight) return i;
    const std::size_t n = i / (static_cast<std::size_t>(c) * hw);
    return n * hw + i % hw;
  };
  Tensor lp(s);
  Tensor y({n_batch});
  for (std::size_t i = 0; i < lp.numel(); ++i) {
    const double sd = scale.value()[i];
    const double z = (x.value()[i] - mean.value()[i]) / sd;
    lp[i] = -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
  }
  const std::size_t row = static_cast<std::size_t>(c) * hw;
  for (int n = 0; n < n_batch; ++n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < row; ++j) {
      const std::size_t i = n * row + j;
      const double w = weight.value()[widx(i)];
      if (w != 0.0) acc += w * lp[i];
    }
    y[n] = acc;
  }
  return make(std::move(y), {x, mean, scale, weight}, [lp, row, widx](Node& self) {
    Node& nx = in(self, 0);
    Node& nm = in(self, 1);
    Node& ns = in(self, 2);
    Node& nw = in(self, 3);
    const std::size_t total = lp.numel();
    Tensor gx, gm, gs, gw;
    if (nx.requires_grad) gx = Tensor(nx.value.shape());
    if (nm.requires_grad) gm = Tensor(nm.value.shape());
    if (ns.requires_grad) gs = Tensor(ns.value.shape());
    if (nw.requires_grad) gw = Tensor(nw.value.shape());
    for (std::size_t i = 0; i < total; ++i) {
      const double g = self.grad[i / row];
      const double w = nw.value[widx(i)];
      if (nw.requires_grad) gw[widx(i)] += g * lp[i];
      if (w == 0.0) continue;
      const double sd = ns.value[i];
      const double r = nx.value[i] - nm.value[i];
      const double dmean = g * w * r / (sd * sd);
      if (nm.requires_grad) gm[i] = dmean;
      if (nx.requires_grad) gx[i] = -dmean;
      if (ns.requires_grad) gs[i] = g * w * (-1.0 / sd + r * r / (sd * sd * sd));
    }
    if (nx.requires_grad) accumulate(nx, gx);
    if (nm.requires_grad) accumulate(nm, gm);
    if (ns.requires_grad) accumulate(ns, gs);
    if (nw.requires_grad) accumulate(nw, gw);
  });
}

Var gaussian_log_prob_rows(const Var& x, const Var& mean, const Var& scale) {
  check_same(x, mean, "gaussian_log_prob_rows");
  check_same(x, scale, "gaussian_log_prob_rows");
  const int n_batch = x.dim(0);
  const std::size_t len = row_len(x.value());
  Tensor y({n_batch});
  for (int n = 0; n < n_batch; ++n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t i = n * len + j;
      const double sd = scale.value()[i];
      const double z = (x.value()[i] - mean.value()[i]) / sd;
      acc += -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
    }
    y[n] = acc;
  }
  return make(std::move(y), {x, mean, scale}, [len](Node& self) {
    Node& nx = in(self, 0);
    Node& nm = in(self, 1);
    Node& ns = in(self, 2);
    Tensor gx(nx.value.shape()), gm(nm.value.shape()), gs(ns.value.shape());
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const double g = self.grad[i / len];
      const double sd = ns.value[i];
      const double r = nx.value[i] - nm.value[i];
      gm[i] = g * r / (sd * sd);
      gx[i] = -gm[i];
      gs[i] = g * (-1.0 / sd + r * r / (sd * sd * sd));
    }
    if (nx.requires_grad) accumulate(nx, gx);
    if (nm.requires_grad) accumulate(nm, gm);
    if (ns.requires_grad) accumulate(ns, gs);
  });
}

Var kl_std_normal(const Var& mean, const Var& scale) {
  check_same(mean, scale, "kl_std_normal");
  const int n_batch = mean.dim(0);
  const std::size_t len = row_len(mean.value());
  Tensor y({n_batch});
  for (int n = 0; n < n_batch; ++n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double mu = mean.value()[n * len + j], sd = scale.value()[n * len + j];
      acc += 0.5 * (mu * mu + sd * sd - 1.0) - std::log(sd);
    }
    y[n] = acc;
  }
  return make(std::move(y), {mean, scale}, [len](Node& self) {
    Node& nm = in(self, 0);
    Node& ns = in(self, 1);
    Tensor gm(nm.value.shape()), gs(ns.value.shape());
    for (std::size_t i = 0; i < gm.numel(); ++i) {
      const double g = self.grad[i / len];
      gm[i] = g * nm.value[i];
      gs[i] = g * (ns.value[i] - 1.0 / ns.value[i]);
    }
    if (nm.requires_grad) accumulate(nm, gm);
    if (ns.requires_grad) accumulate(ns, gs);
  });
}

Var straight_through(const Tensor& hard, const Var& soft, const Tensor& anchor) {
  require(hard.same_shape(soft.value()) && anchor.same_shape(hard), "straight_through shape mismatch");
  Tensor v = hard;
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] += soft.value()[i] - anchor[i];
  return make(std::move(v), {soft}, [](Node& self) { accumulate(in(self, 0), self.grad); });
}

Var dedup_straight_through(const Var& counts) {
  Tensor v = counts.value();
  for (double& c : v.span()) {
    if (!std::isfinite(c)) continue;
    const double r = std::round(c);
    require(r >= 0.0, "dedup: negative count");
    c = (r > 0.0 ? 1.0 : 0.0) + (c - r);
  }
  return make(std::move(v), {counts}, [](Node& self) { accumulate(in(self, 0), self.grad); });
}

}  // namespace ppsvae::ag
