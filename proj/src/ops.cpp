#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cvcrf/tensor.hpp"

namespace cvcrf::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Backward = std::function<void(const Node&)>;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) throw std::logic_error("ops: undefined tensor operand");
  return t.node();
}

bool needs(const NodePtr& n) { return n && n->requires_grad; }

Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::initializer_list<NodePtr> inputs,
                   Backward backward) {
  if (check_finite_enabled()) {
    for (double v : value) {
      if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || needs(in);
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) {
        if (in) node->parents.push_back(in);
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Views `shape` as (outer, shape[axis], inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(op, shape, {axis}, "axis out of range");
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

// Index maps for NumPy broadcasting. Empty maps mean identity.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      plan.out[i] = pa[i];
    } else if (pa[i] == 1) {
      plan.out[i] = pb[i];
    } else {
      throw ShapeError(op, a, b, "not broadcastable");
    }
  }
  auto strides = [&](const Shape& padded) {
    std::vector<std::size_t> st(rank, 0);
    std::size_t acc = 1;
    for (std::size_t i = rank; i-- > 0;) {
      st[i] = padded[i] == 1 ? 0 : acc;
      acc *= padded[i];
    }
    return st;
  };
  const auto sa = strides(pa);
  const auto sb = strides(pb);
  const std::size_t n = shape_numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.ia[flat] = oa;
    plan.ib[flat] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < plan.out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      oa -= sa[d] * (plan.out[d] - 1);
      ob -= sb[d] * (plan.out[d] - 1);
      idx[d] = 0;
    }
  }
  return plan;
}

template <class Forward, class GradA, class GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward f, GradA ga, GradB gb) {
  const NodePtr& na = node_of(a);
  const NodePtr& nb = node_of(b);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(na->shape, nb->shape, op));
  const std::size_t n = shape_numel(plan->out);
  const bool identity = plan->ia.empty();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ia = identity ? i : plan->ia[i];
    const std::size_t ib = identity ? i : plan->ib[i];
    out[i] = f(na->value[ia], nb->value[ib]);
  }
  Shape shape = plan->out;
  return make_result(op, std::move(shape), std::move(out), {na, nb}, [na, nb, plan, identity, ga, gb](const Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const std::size_t ia = identity ? i : plan->ia[i];
      const std::size_t ib = identity ? i : plan->ib[i];
      const double x = na->value[ia], y = nb->value[ib], g = self.grad[i];
      if (na->requires_grad) na->grad[ia] += ga(x, y, g);
      if (nb->requires_grad) nb->grad[ib] += gb(x, y, g);
    }
  });
}

template <class Forward, class Derivative>
Tensor unary(const char* op, const Tensor& x, Forward f, Derivative df) {
  const NodePtr& nx = node_of(x);
  std::vector<double> out(nx->value.size());
  std::transform(nx->value.begin(), nx->value.end(), out.begin(), f);
  return make_result(op, nx->shape, std::move(out), {nx}, [nx, df](const Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += self.grad[i] * df(nx->value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const NodePtr& na = node_of(a);
  const NodePtr& nb = node_of(b);
  if (na->shape.size() != 2 || nb->shape.size() != 2 || na->shape[1] != nb->shape[0]) {
    throw ShapeError("matmul", na->shape, nb->shape);
  }
  const auto m = static_cast<Eigen::Index>(na->shape[0]);
  const auto k = static_cast<Eigen::Index>(na->shape[1]);
  const auto n = static_cast<Eigen::Index>(nb->shape[1]);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), m, n).noalias() = ConstMap(na->value.data(), m, k) * ConstMap(nb->value.data(), k, n);
  return make_result("matmul", {na->shape[0], nb->shape[1]}, std::move(out), {na, nb}, [na, nb, m, k, n](const Node& self) {
    ConstMap g(self.grad.data(), m, n);
    if (na->requires_grad) MutMap(na->grad.data(), m, k).noalias() += g * ConstMap(nb->value.data(), k, n).transpose();
    if (nb->requires_grad) MutMap(nb->grad.data(), k, n).noalias() += ConstMap(na->value.data(), m, k).transpose() * g;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& xs = x.shape();
  if (xs.empty() || weight.rank() != 2 || xs.back() != weight.dim(0)) {
    throw ShapeError("linear", xs, weight.shape());
  }
  const std::size_t in = xs.back();
  const std::size_t rows = x.numel() / in;
  Tensor y = matmul(xs.size() == 2 ? x : reshape(x, {rows, in}), weight);
  if (bias.defined()) y = add(y, bias);
  if (xs.size() == 2) return y;
  Shape out_shape = xs;
  out_shape.back() = weight.dim(1);
  return reshape(y, std::move(out_shape));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  const NodePtr& nx = node_of(x);
  const NodePtr& nw = node_of(weight);
  const NodePtr nb = bias.defined() ? bias.node() : nullptr;
  const Shape& xs = nx->shape;
  const Shape& ws = nw->shape;
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) throw ShapeError("conv2d", xs, ws);
  if (stride == 0) throw ShapeError("conv2d", xs, ws, "stride must be positive");
  if (nb && (nb->shape.size() != 1 || nb->shape[0] != ws[0])) throw ShapeError("conv2d", ws, nb->shape, "bias");
  const std::size_t batch = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
  if (h + 2 * padding < kh || w + 2 * padding < kw) throw ShapeError("conv2d", xs, ws, "kernel larger than input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t plane = ho * wo;
  const std::size_t ckk = cin * kh * kw;
  const std::size_t cols_n = batch * plane;

  // im2col: row = (c, i, j), column = (n, oy, ox).
  auto cols = std::make_shared<std::vector<double>>(ckk * cols_n, 0.0);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols->data() + ((c * kh + i) * kw + j) * cols_n;
        for (std::size_t n = 0; n < batch; ++n) {
          const double* src = nx->value.data() + (n * cin + c) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              row[n * plane + oy * wo + ox] = src[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }

  const auto eo = static_cast<Eigen::Index>(cout);
  const auto ek = static_cast<Eigen::Index>(ckk);
  const auto en = static_cast<Eigen::Index>(cols_n);
  RowMat prod = ConstMap(nw->value.data(), eo, ek) * ConstMap(cols->data(), ek, en);
  std::vector<double> out(batch * cout * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double b = nb ? nb->value[o] : 0.0;
      const double* src = prod.data() + o * cols_n + n * plane;
      double* dst = out.data() + (n * cout + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }

  auto backward = [=](const Node& self) {
    RowMat g(eo, en);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < cout; ++o) {
        const double* src = self.grad.data() + (n * cout + o) * plane;
        std::copy(src, src + plane, g.data() + o * cols_n + n * plane);
      }
    }
    if (nb && nb->requires_grad) {
      for (std::size_t o = 0; o < cout; ++o) nb->grad[o] += g.row(static_cast<Eigen::Index>(o)).sum();
    }
    if (nw->requires_grad) {
      MutMap(nw->grad.data(), eo, ek).noalias() += g * ConstMap(cols->data(), ek, en).transpose();
    }
    if (nx->requires_grad) {
      RowMat dcols = ConstMap(nw->value.data(), eo, ek).transpose() * g;
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            const double* row = dcols.data() + ((c * kh + i) * kw + j) * cols_n;
            for (std::size_t n = 0; n < batch; ++n) {
              double* dst = nx->grad.data() + (n * cin + c) * h * w;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  dst[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] +=
                      row[n * plane + oy * wo + ox];
                }
              }
            }
          }
        }
      }
    }
  };
  return make_result("conv2d", {batch, cout, ho, wo}, std::move(out), {nx, nw, nb}, std::move(backward));
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  const NodePtr& nx = node_of(x);
  const Shape& xs = nx->shape;
  if (xs.size() != 4 || kernel == 0 || stride == 0 || xs[2] < kernel || xs[3] < kernel) {
    throw ShapeError("max_pool2d", xs, {kernel, kernel}, "kernel/stride");
  }
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  std::vector<double> out(planes * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = nx->value.data() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t at = (oy * stride + i) * w + ox * stride + j;
            if (src[at] > src[best]) best = at;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = src[best];
        (*argmax)[o] = p * h * w + best;
      }
    }
  }
  return make_result("max_pool2d", {xs[0], xs[1], ho, wo}, std::move(out), {nx}, [nx, argmax](const Node& self) {
    for (std::size_t o = 0; o < self.grad.size(); ++o) nx->grad[(*argmax)[o]] += self.grad[o];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  const NodePtr& nx = node_of(x);
  const Shape& xs = nx->shape;
  if (xs.size() != 4) throw ShapeError("global_avg_pool", xs, {}, "expected NCHW");
  const std::size_t planes = xs[0] * xs[1], area = xs[2] * xs[3];
  std::vector<double> out(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = nx->value.data() + p * area;
    out[p] = std::accumulate(src, src + area, 0.0) / static_cast<double>(area);
  }
  return make_result("global_avg_pool", {xs[0], xs[1]}, std::move(out), {nx}, [nx, area](const Node& self) {
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t p = 0; p < self.grad.size(); ++p) {
      double* dst = nx->grad.data() + p * area;
      for (std::size_t i = 0; i < area; ++i) dst[i] += self.grad[p] * inv;
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const NodePtr& nx = node_of(x);
  const AxisSplit s = split_at(nx->shape, axis, "softmax");
  std::vector<double> out(nx->value.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) mx = std::max(mx, nx->value[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) {
        const double e = std::exp(nx->value[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] /= total;
    }
  }
  return make_result("softmax", nx->shape, std::move(out), {nx}, [nx, s](const Node& self) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.len; ++i) dot += self.grad[base + i * s.inner] * self.value[base + i * s.inner];
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t at = base + i * s.inner;
          nx->grad[at] += self.value[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const NodePtr& nx = node_of(x);
  const AxisSplit s = split_at(nx->shape, axis, "log_softmax");
  std::vector<double> out(nx->value.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) mx = std::max(mx, nx->value[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) total += std::exp(nx->value[base + i * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] = nx->value[base + i * s.inner] - lse;
    }
  }
  return make_result("log_softmax", nx->shape, std::move(out), {nx}, [nx, s](const Node& self) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double gsum = 0.0;
        for (std::size_t i = 0; i < s.len; ++i) gsum += self.grad[base + i * s.inner];
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t at = base + i * s.inner;
          nx->grad[at] += self.grad[at] - std::exp(self.value[at]) * gsum;
        }
      }
    }
  });
}

Tensor logsumexp(const Tensor& x, std::size_t axis, std::span<const std::uint8_t> mask) {
  const NodePtr& nx = node_of(x);
  const AxisSplit s = split_at(nx->shape, axis, "logsumexp");
  if (!mask.empty() && mask.size() != nx->value.size()) {
    throw ShapeError("logsumexp", nx->shape, {mask.size()}, "mask size");
  }
  auto keep = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  if (keep->empty()) keep->assign(nx->value.size(), 1);
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) {
        const std::size_t at = base + i * s.inner;
        if ((*keep)[at]) mx = std::max(mx, nx->value[at]);
      }
      if (!std::isfinite(mx)) throw std::invalid_argument("logsumexp: empty or non-finite masked slice");
      double total = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) {
        const std::size_t at = base + i * s.inner;
        if ((*keep)[at]) total += std::exp(nx->value[at] - mx);
      }
      out[o * s.inner + in] = mx + std::log(total);
    }
  }
  return make_result("logsumexp", drop_axis(nx->shape, axis), std::move(out), {nx}, [nx, s, keep](const Node& self) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t r = o * s.inner + in;
        const std::size_t base = o * s.len * s.inner + in;
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t at = base + i * s.inner;
          if ((*keep)[at]) nx->grad[at] += self.grad[r] * std::exp(nx->value[at] - self.value[r]);
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  const NodePtr& nx = node_of(x);
  const double total = std::accumulate(nx->value.begin(), nx->value.end(), 0.0);
  return make_result("sum", {}, {total}, {nx}, [nx](const Node& self) {
    for (double& g : nx->grad) g += self.grad[0];
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const NodePtr& nx = node_of(x);
  const AxisSplit s = split_at(nx->shape, axis, "sum");
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.len; ++i) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        out[o * s.inner + in] += nx->value[(o * s.len + i) * s.inner + in];
      }
    }
  }
  return make_result("sum", drop_axis(nx->shape, axis), std::move(out), {nx}, [nx, s](const Node& self) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.len; ++i) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          nx->grad[(o * s.len + i) * s.inner + in] += self.grad[o * s.inner + in];
        }
      }
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat", first, {axis}, "axis out of range");
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> lens;
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != first.size()) throw ShapeError("concat", first, ps);
    for (std::size_t d = 0; d < ps.size(); ++d) {
      if (d != axis && ps[d] != first[d]) throw ShapeError("concat", first, ps);
    }
    nodes.push_back(p.node());
    lens.push_back(ps[axis]);
    out_shape[axis] += ps[axis];
  }
  const AxisSplit s = split_at(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const std::size_t chunk = lens[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(nodes[k]->value.data() + o * chunk, chunk, out.data() + o * s.len * s.inner + offset);
    }
    offset += chunk;
  }

  auto backward = [nodes, lens, s](const Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t chunk = lens[k] * s.inner;
      if (nodes[k]->requires_grad) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = self.grad.data() + o * s.len * s.inner + off;
          double* dst = nodes[k]->grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      off += chunk;
    }
  };

  // make_result takes an initializer_list; build the node by hand for N inputs.
  if (check_finite_enabled()) {
    for (double v : out) {
      if (!std::isfinite(v)) throw NumericError("concat: non-finite output");
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(out_shape);
  node->value = std::move(out);
  if (grad_enabled() && std::any_of(nodes.begin(), nodes.end(), [](const NodePtr& n) { return n->requires_grad; })) {
    node->requires_grad = true;
    node->parents = nodes;
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const NodePtr& nx = node_of(x);
  const AxisSplit s = split_at(nx->shape, axis, "slice");
  if (begin >= end || end > s.len) throw ShapeError("slice", nx->shape, {begin, end}, "bad range");
  Shape out_shape = nx->shape;
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  std::vector<double> out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(nx->value.data() + (o * s.len + begin) * s.inner, chunk, out.data() + o * chunk);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {nx}, [nx, s, begin, chunk](const Node& self) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = nx->grad.data() + (o * s.len + begin) * s.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += self.grad[o * chunk + i];
    }
  });
}

std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> sizes) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (axis >= x.rank() || total != x.dim(axis)) throw ShapeError("split", x.shape(), Shape(sizes.begin(), sizes.end()));
  std::vector<Tensor> parts;
  std::size_t at = 0;
  for (std::size_t len : sizes) {
    parts.push_back(slice(x, axis, at, at + len));
    at += len;
  }
  return parts;
}

Tensor reshape(const Tensor& x, Shape shape) {
  const NodePtr& nx = node_of(x);
  if (shape_numel(shape) != nx->value.size()) throw ShapeError("reshape", nx->shape, shape);
  return make_result("reshape", std::move(shape), nx->value, {nx}, [nx](const Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const NodePtr& nx = node_of(x);
  const Shape& xs = nx->shape;
  const std::size_t rank = xs.size();
  std::vector<bool> used(rank, false);
  if (axes.size() != rank) throw ShapeError("permute", xs, Shape(axes.begin(), axes.end()));
  for (std::size_t a : axes) {
    if (a >= rank || used[a]) throw ShapeError("permute", xs, Shape(axes.begin(), axes.end()), "not a permutation");
    used[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank), src_stride(rank);
  std::size_t acc = 1;
  for (std::size_t d = rank; d-- > 0;) {
    in_strides[d] = acc;
    acc *= xs[d];
  }
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = xs[axes[d]];
    src_stride[d] = in_strides[axes[d]];
  }
  const std::size_t n = nx->value.size();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<double> out(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*map)[flat] = src;
    out[flat] = nx->value[src];
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        src += src_stride[d];
        break;
      }
      src -= src_stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  return make_result("permute", std::move(out_shape), std::move(out), {nx}, [nx, map](const Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[(*map)[i]] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose", x.shape(), {}, "expected a matrix");
  return permute(x, {1, 0});
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps, std::size_t* degenerate) {
  const NodePtr& nx = node_of(x);
  const AxisSplit s = split_at(nx->shape, axis, "l2_normalize");
  auto norms = std::make_shared<std::vector<double>>(s.outer * s.inner);
  std::vector<double> out(nx->value.size(), 0.0);
  std::size_t bad = 0;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double sq = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) sq += nx->value[base + i * s.inner] * nx->value[base + i * s.inner];
      const double norm = std::sqrt(sq);
      (*norms)[o * s.inner + in] = norm;
      if (norm < eps) {
        ++bad;
        continue;
      }
      for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] = nx->value[base + i * s.inner] / norm;
    }
  }
  if (degenerate) *degenerate = bad;
  return make_result("l2_normalize", nx->shape, std::move(out), {nx}, [nx, s, norms, eps](const Node& self) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const double norm = (*norms)[o * s.inner + in];
        if (norm < eps) continue;
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.len; ++i) dot += self.grad[base + i * s.inner] * self.value[base + i * s.inner];
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t at = base + i * s.inner;
          nx->grad[at] += (self.grad[at] - self.value[at] * dot) / norm;
        }
      }
    }
  });
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const NodePtr& nq = node_of(q);
  const NodePtr& nk = node_of(k);
  const NodePtr& nv = node_of(v);
  if (nq->shape.size() != 3 || nq->shape != nk->shape) throw ShapeError("attention", nq->shape, nk->shape);
  if (nv->shape != nq->shape) throw ShapeError("attention", nq->shape, nv->shape);
  const std::size_t groups = nq->shape[0];
  const auto t = static_cast<Eigen::Index>(nq->shape[1]);
  const auto d = static_cast<Eigen::Index>(nq->shape[2]);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t qsize = static_cast<std::size_t>(t * d);
  const std::size_t asize = static_cast<std::size_t>(t * t);

  auto probs = std::make_shared<std::vector<double>>(groups * asize);
  std::vector<double> out(nq->value.size());
  for (std::size_t g = 0; g < groups; ++g) {
    ConstMap qm(nq->value.data() + g * qsize, t, d);
    ConstMap km(nk->value.data() + g * qsize, t, d);
    ConstMap vm(nv->value.data() + g * qsize, t, d);
    MutMap a(probs->data() + g * asize, t, t);
    a.noalias() = (qm * km.transpose()) * inv_sqrt;
    for (Eigen::Index r = 0; r < t; ++r) {
      const double mx = a.row(r).maxCoeff();
      a.row(r) = (a.row(r).array() - mx).exp().matrix();
      a.row(r) /= a.row(r).sum();
    }
    MutMap(out.data() + g * qsize, t, d).noalias() = a * vm;
  }

  auto backward = [=](const Node& self) {
    RowMat da(t, t), ds(t, t);
    for (std::size_t g = 0; g < groups; ++g) {
      ConstMap gout(self.grad.data() + g * qsize, t, d);
      ConstMap qm(nq->value.data() + g * qsize, t, d);
      ConstMap km(nk->value.data() + g * qsize, t, d);
      ConstMap vm(nv->value.data() + g * qsize, t, d);
      ConstMap a(probs->data() + g * asize, t, t);
      if (nv->requires_grad) MutMap(nv->grad.data() + g * qsize, t, d).noalias() += a.transpose() * gout;
      if (!nq->requires_grad && !nk->requires_grad) continue;
      da.noalias() = gout * vm.transpose();
      for (Eigen::Index r = 0; r < t; ++r) {
        const double dot = a.row(r).dot(da.row(r));
        ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix() * inv_sqrt;
      }
      if (nq->requires_grad) MutMap(nq->grad.data() + g * qsize, t, d).noalias() += ds * km;
      if (nk->requires_grad) MutMap(nk->grad.data() + g * qsize, t, d).noalias() += ds.transpose() * qm;
    }
  };
  return make_result("attention", nq->shape, std::move(out), {nq, nk, nv}, std::move(backward));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy", logits.shape(), {labels.size()});
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<double> onehot(batch * classes, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    onehot[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  const Tensor picked = mul(log_softmax(logits, 1), Tensor::from_data({batch, classes}, std::move(onehot)));
  return scale(sum(picked), -1.0 / static_cast<double>(batch));
}

}  // namespace cvcrf::ops
