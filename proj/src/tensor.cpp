#include "ppsvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ppsvae {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    require(d >= 0, "negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_numel(shape_), "data size does not match shape " + shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == numel(), "reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_batch(int n) const {
  require(rank() >= 1 && n >= 0 && n < shape_[0], "slice_batch index out of range");
  Shape s = shape_;
  s[0] = 1;
  const std::size_t stride = numel() / static_cast<std::size_t>(shape_[0]);
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(n * stride),
                        data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
  return Tensor(std::move(s), std::move(d));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  require(same_shape(other), "add_ shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(double s) {
  for (double& v : data_) v *= s;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  require(!items.empty(), "stack_batch of nothing");
  const Shape& first = items.front().shape();
  Shape out;
  if (!first.empty() && first[0] == 1) {
    out = first;
    out[0] = static_cast<int>(items.size());
  } else {
    out.push_back(static_cast<int>(items.size()));
    out.insert(out.end(), first.begin(), first.end());
  }
  std::vector<double> d;
  d.reserve(shape_numel(out));
  for (const auto& t : items) {
    require(t.shape() == first, "stack_batch shape mismatch");
    d.insert(d.end(), t.vec().begin(), t.vec().end());
  }
  return Tensor(std::move(out), std::move(d));
}

double sum(const Tensor& t) { return std::accumulate(t.vec().begin(), t.vec().end(), 0.0); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.vec().begin(), t.vec().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace ppsvae
