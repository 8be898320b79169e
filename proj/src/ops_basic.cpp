#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "maskedit/errors.hpp"
#include "maskedit/ops.hpp"
#include "maskedit/simd/kernels.hpp"

namespace maskedit::ops {
namespace {

using detail::grad_target;
using detail::make_result;
using detail::Node;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// For every element of `out`, the flat offset of the element of `in` it reads.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = rank - 1 - k;
    stride[o] = in[i] == 1 ? 0 : s;
    s *= static_cast<std::size_t>(in[i]);
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> index(n);
  std::vector<int> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t e = 0; e < n; ++e) {
    index[e] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out[d]) {
        offset += stride[d];
        break;
      }
      offset -= stride[d] * static_cast<std::size_t>(out[d] - 1);
      counter[d] = 0;
    }
  }
  return index;
}

template <class Forward, class GradA, class GradB>
Tensor binary(const Tensor& a, const Tensor& b, Forward f, GradA ga, GradB gb) {
  const auto av = a.values();
  const auto bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), {a, b}, [ga, gb](Node& self) {
      const auto& x = self.inputs[0]->value;
      const auto& y = self.inputs[1]->value;
      const auto& g = self.grad;
      if (double* gx = grad_target(self, 0))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += ga(x[i], y[i], self.value[i], g[i]);
      if (double* gy = grad_target(self, 1))
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += gb(x[i], y[i], self.value[i], g[i]);
    });
  }
  Shape shape = broadcast_shape(a.shape(), b.shape());
  auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), shape));
  auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(b.shape(), shape));
  std::vector<double> out(ia->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[(*ia)[i]], bv[(*ib)[i]]);
  return make_result(std::move(shape), std::move(out), {a, b}, [ia, ib, ga, gb](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    const auto& g = self.grad;
    double* gx = grad_target(self, 0);
    double* gy = grad_target(self, 1);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xv = x[(*ia)[i]], yv = y[(*ib)[i]];
      if (gx) gx[(*ia)[i]] += ga(xv, yv, self.value[i], g[i]);
      if (gy) gy[(*ib)[i]] += gb(xv, yv, self.value[i], g[i]);
    }
  });
}

template <class Forward, class Grad>
Tensor unary(const Tensor& x, Forward f, Grad dg) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [dg](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    const auto& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      gx[i] += dg(in[i], self.value[i], self.grad[i]);
  });
}

struct Split {
  std::size_t outer, n, inner;
};

Split split_at(const Shape& shape, int dim) {
  Split s{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(dim)]), 1};
  for (int i = 0; i < dim; ++i) s.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(dim) + 1; i < shape.size(); ++i)
    s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

int normalize_dim(int dim, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int d = dim < 0 ? dim + r : dim;
  if (d < 0 || d >= r) throw DimensionError("dimension " + std::to_string(dim) + " out of range");
  return d;
}

Shape reduced_shape(const Shape& shape, int dim, bool keepdim) {
  Shape out = shape;
  if (keepdim)
    out[static_cast<std::size_t>(dim)] = 1;
  else
    out.erase(out.begin() + dim);
  return out;
}

Tensor arg_reduce(const Tensor& x, int dim, bool keepdim, bool take_max) {
  const int d = normalize_dim(dim, x.shape().size());
  const Split s = split_at(x.shape(), d);
  if (s.n == 0) throw DimensionError("reduction over an empty dimension");
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.n * s.inner + i;
      for (std::size_t k = 1; k < s.n; ++k) {
        const std::size_t idx = (o * s.n + k) * s.inner + i;
        if (take_max ? xv[idx] > xv[best] : xv[idx] < xv[best]) best = idx;
      }
      out[o * s.inner + i] = xv[best];
      (*arg)[o * s.inner + i] = best;
    }
  return make_result(reduced_shape(x.shape(), d, keepdim), std::move(out), {x}, [arg](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += self.grad[i];
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double, double g) { return g * y; },
      [](double x, double, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double, double g) { return g / y; },
      [](double, double y, double out, double g) { return -g * out / y; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double, double g) { return x <= y ? g : 0.0; },
      [](double x, double y, double, double g) { return x <= y ? 0.0 : g; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double, double g) { return x >= y ? g : 0.0; },
      [](double x, double y, double, double g) { return x >= y ? 0.0 : g; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(
      x, [s](double v) { return v + s; }, [](double, double, double g) { return g; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return unary(
      x, [s](double v) { return v * s; }, [s](double, double, double g) { return g * s; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); },
      [](double, double out, double g) { return g * out; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double in, double, double g) { return g / in; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double in, double, double g) { return in > 0 ? g : (in < 0 ? -g : 0.0); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double out, double g) { return out > 0 ? 0.5 * g / out : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double in, double, double g) { return 2.0 * in * g; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double in, double, double g) { return in > 0 ? g : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double in, double, double g) { return in > 0 ? g : slope * g; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out, double g) { return g * out * (1.0 - out); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double in, double, double g) { return (in >= lo && in <= hi) ? g : 0.0; });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result({}, {total}, {x}, [](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    const double g = self.grad[0];
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, int dim, bool keepdim) {
  const int d = normalize_dim(dim, x.shape().size());
  const Split s = split_at(x.shape(), d);
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k) {
      const double* src = xv.data() + (o * s.n + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  return make_result(reduced_shape(x.shape(), d, keepdim), std::move(out), {x}, [s](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k) {
        double* dst = gx + (o * s.n + k) * s.inner;
        const double* g = self.grad.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
      }
  });
}

Tensor mean(const Tensor& x, int dim, bool keepdim) {
  const int d = normalize_dim(dim, x.shape().size());
  const int n = x.shape()[static_cast<std::size_t>(d)];
  if (n == 0) throw DimensionError("mean over an empty dimension");
  return mul_scalar(sum(x, d, keepdim), 1.0 / n);
}

Tensor max(const Tensor& x, int dim, bool keepdim) { return arg_reduce(x, dim, keepdim, true); }
Tensor min(const Tensor& x, int dim, bool keepdim) { return arg_reduce(x, dim, keepdim, false); }

Tensor reshape(const Tensor& x, Shape shape) {
  int infer = -1;
  std::size_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape with more than one inferred dimension");
      infer = static_cast<int>(i);
    } else {
      known *= static_cast<std::size_t>(shape[i]);
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0)
      throw ShapeError("cannot infer reshape of " + to_string(x.shape()));
    shape[static_cast<std::size_t>(infer)] = static_cast<int>(x.numel() / known);
  }
  if (numel(shape) != x.numel())
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  const auto xv = x.values();
  return make_result(std::move(shape), {xv.begin(), xv.end()}, {x}, [](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    simd::kernels().axpy(self.grad.size(), 1.0, self.grad.data(), gx);
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.size()) throw ShapeError("permute order rank mismatch");
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * static_cast<std::size_t>(in[i]);
  Shape out(rank);
  std::vector<std::size_t> stride(rank);
  std::vector<bool> seen(rank, false);
  for (std::size_t i = 0; i < rank; ++i) {
    const int src = order[i];
    if (src < 0 || static_cast<std::size_t>(src) >= rank || seen[static_cast<std::size_t>(src)])
      throw ShapeError("invalid permutation");
    seen[static_cast<std::size_t>(src)] = true;
    out[i] = in[static_cast<std::size_t>(src)];
    stride[i] = in_stride[static_cast<std::size_t>(src)];
  }
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<int> counter(rank, 0);
    std::size_t offset = 0;
    for (std::size_t e = 0; e < index->size(); ++e) {
      (*index)[e] = offset;
      for (std::size_t d = rank; d-- > 0;) {
        if (++counter[d] < out[d]) {
          offset += stride[d];
          break;
        }
        offset -= stride[d] * static_cast<std::size_t>(out[d] - 1);
        counter[d] = 0;
      }
    }
  }
  const auto xv = x.values();
  std::vector<double> values(index->size());
  for (std::size_t e = 0; e < values.size(); ++e) values[e] = xv[(*index)[e]];
  return make_result(std::move(out), std::move(values), {x}, [index](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t e = 0; e < index->size(); ++e) gx[(*index)[e]] += self.grad[e];
  });
}

Tensor slice(const Tensor& x, int dim, int start, int end) {
  const int d = normalize_dim(dim, x.shape().size());
  const int extent = x.shape()[static_cast<std::size_t>(d)];
  if (start < 0 || end > extent || start > end)
    throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(end) +
                         ") out of range for extent " + std::to_string(extent));
  const Split s = split_at(x.shape(), d);
  const std::size_t len = static_cast<std::size_t>(end - start);
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(d)] = end - start;
  const auto xv = x.values();
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.n + static_cast<std::size_t>(start)) * s.inner, len * s.inner,
                out.data() + o * len * s.inner);
  return make_result(std::move(shape), std::move(out), {x}, [s, len, start](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      simd::kernels().axpy(len * s.inner, 1.0, self.grad.data() + o * len * s.inner,
                           gx + (o * s.n + static_cast<std::size_t>(start)) * s.inner);
  });
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const int d = normalize_dim(dim, first.size());
  Shape shape = first;
  shape[static_cast<std::size_t>(d)] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (static_cast<int>(i) != d && ps[i] != first[i])
        throw ShapeError("concat shape mismatch: " + to_string(ps) + " vs " + to_string(first));
    shape[static_cast<std::size_t>(d)] += ps[static_cast<std::size_t>(d)];
    extents.push_back(static_cast<std::size_t>(ps[static_cast<std::size_t>(d)]));
  }
  const Split s = split_at(shape, d);
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pv = parts[p].values();
    const std::size_t chunk = extents[p] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * s.n * s.inner + offset * s.inner);
    offset += extents[p];
  }
  return make_result(std::move(shape), std::move(out), parts, [s, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const std::size_t chunk = extents[p] * s.inner;
      if (double* gp = grad_target(self, p))
        for (std::size_t o = 0; o < s.outer; ++o)
          simd::kernels().axpy(chunk, 1.0, self.grad.data() + o * s.n * s.inner + offset * s.inner,
                               gp + o * chunk);
      offset += extents[p];
    }
  });
}

Tensor expand(const Tensor& x, Shape shape) {
  if (broadcast_shape(x.shape(), shape) != shape)
    throw ShapeError("cannot expand " + to_string(x.shape()) + " to " + to_string(shape));
  auto index = std::make_shared<std::vector<std::size_t>>(broadcast_index(x.shape(), shape));
  const auto xv = x.values();
  std::vector<double> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*index)[i]];
  return make_result(std::move(shape), std::move(out), {x}, [index](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < index->size(); ++i) gx[(*index)[i]] += self.grad[i];
  });
}

Tensor softmax(const Tensor& x, int dim) {
  const int d = normalize_dim(dim, x.shape().size());
  const Split s = split_at(x.shape(), d);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double top = -inf;
      for (std::size_t k = 0; k < s.n; ++k) top = std::max(top, xv[base + k * s.inner]);
      if (top == inf) {
        std::size_t count = 0;
        for (std::size_t k = 0; k < s.n; ++k) count += xv[base + k * s.inner] == inf;
        for (std::size_t k = 0; k < s.n; ++k)
          out[base + k * s.inner] = xv[base + k * s.inner] == inf ? 1.0 / static_cast<double>(count) : 0.0;
        continue;
      }
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - top);
        out[base + k * s.inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] *= inv;
    }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    double* gx = grad_target(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dotp = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dotp += y[base + k * s.inner] * g[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          gx[idx] += y[idx] * (g[idx] - dotp);
        }
      }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) throw ShapeError("matmul needs rank >= 2 operands");
  const int m = as[as.size() - 2], k = as[as.size() - 1];
  const int kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != kb) throw ShapeError("matmul inner dimension mismatch: " + to_string(as) + " x " + to_string(bs));
  const bool shared_b = bs.size() == 2;
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= static_cast<std::size_t>(as[i]);
  if (!shared_b) {
    if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))
      throw ShapeError("matmul batch mismatch: " + to_string(as) + " x " + to_string(bs));
  }
  Shape shape(as.begin(), as.end() - 2);
  shape.push_back(m);
  shape.push_back(n);
  const std::size_t a_stride = static_cast<std::size_t>(m) * k;
  const std::size_t b_stride = shared_b ? 0 : static_cast<std::size_t>(k) * n;
  const std::size_t c_stride = static_cast<std::size_t>(m) * n;
  std::vector<double> out(batch * c_stride, 0.0);
  const auto& kern = simd::kernels();
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t t = 0; t < batch; ++t)
    kern.gemm(m, n, k, av.data() + t * a_stride, k, 1, bv.data() + t * b_stride, n,
              out.data() + t * c_stride, n);
  return make_result(std::move(shape), std::move(out), {a, b},
                     [=](Node& self) {
                       const auto& kn = simd::kernels();
                       const auto& A = self.inputs[0]->value;
                       const auto& B = self.inputs[1]->value;
                       double* ga = grad_target(self, 0);
                       double* gb = grad_target(self, 1);
                       for (std::size_t t = 0; t < batch; ++t) {
                         const double* g = self.grad.data() + t * c_stride;
                         // dA = G B^T ; dB = A^T G
                         if (ga) kn.gemm_abt(m, k, n, g, n, B.data() + t * b_stride, n, ga + t * a_stride, k);
                         if (gb) kn.gemm(k, n, m, A.data() + t * a_stride, 1, k, g, n, gb + t * b_stride, n);
                       }
                     });
}

}  // namespace maskedit::ops
