// SPDX-License-Identifier: Apache-2.0
#include "vcd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vcd/error.hpp"

namespace vcd::ad {

namespace {

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_op(std::move(y), {a}, [df](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const Tensor& x = in.value;
    const Tensor& y = self.value;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * df(x[i], y[i]);
  });
}

void check_same(const Var& a, const Var& b, const char* where) {
  require_same_shape(a.value(), b.value(), where);
}

}  // namespace

Var add(const Var& a, const Var& b) { return affine(a, 1.0, b, 1.0); }
Var sub(const Var& a, const Var& b) { return affine(a, 1.0, b, -1.0); }

Var affine(const Var& a, double alpha, const Var& b, double beta) {
  check_same(a, b, "affine");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = alpha * x[i] + beta * z[i];
  return make_op(std::move(y), {a, b}, [alpha, beta](Node& self) {
    const double coeff[2] = {alpha, beta};
    for (std::size_t k = 0; k < 2; ++k) {
      Node& in = input(self, k);
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += coeff[k] * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * z[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    Node& l = input(self, 0);
    Node& r = input(self, 1);
    if (l.requires_grad) {
      Tensor& g = l.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * r.value[i];
    }
    if (r.requires_grad) {
      Tensor& g = r.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * l.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var scale_batch(const Var& a, std::span<const double> coeff) {
  const Tensor& x = a.value();
  const int batch = x.dim(0);
  if (static_cast<std::size_t>(batch) != coeff.size()) {
    throw ShapeError("scale_batch: coefficient count does not match batch size");
  }
  const std::size_t inner = x.size() / static_cast<std::size_t>(batch);
  std::vector<double> c(coeff.begin(), coeff.end());
  Tensor y(x.shape());
  for (int b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < inner; ++i) y[b * inner + i] = c[b] * x[b * inner + i];
  return make_op(std::move(y), {a}, [c, inner](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t b = 0; b < c.size(); ++b)
      for (std::size_t i = 0; i < inner; ++i) g[b * inner + i] += c[b] * self.grad[b * inner + i];
  });
}

Var abs(const Var& a) {
  trace_kinks(a.value().values());
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

namespace {
double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary(a, logistic, [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x * logistic(x); },
      [](double x, double) {
        const double s = logistic(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var leaky_relu(const Var& a, double slope) {
  trace_kinks(a.value().values());
  return unary(
      a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

Var glu(const Var& x) {
  const Tensor& v = x.value();
  if (v.rank() != 3 || v.dim(1) % 2 != 0) throw ShapeError("glu expects [B, 2C, T], got " + to_string(v.shape()));
  const int B = v.dim(0), C = v.dim(1) / 2, T = v.dim(2);
  Tensor y({B, C, T});
  Tensor gate({B, C, T});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) {
        const std::size_t ia = (static_cast<std::size_t>(b) * 2 * C + c) * T + t;
        const std::size_t ig = ia + static_cast<std::size_t>(C) * T;
        const std::size_t io = (static_cast<std::size_t>(b) * C + c) * T + t;
        gate[io] = logistic(v[ig]);
        y[io] = v[ia] * gate[io];
      }
  return make_op(std::move(y), {x}, [gate = std::move(gate), B, C, T](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) {
          const std::size_t ia = (static_cast<std::size_t>(b) * 2 * C + c) * T + t;
          const std::size_t ig = ia + static_cast<std::size_t>(C) * T;
          const std::size_t io = (static_cast<std::size_t>(b) * C + c) * T + t;
          const double s = gate[io];
          g[ia] += self.grad[io] * s;
          g[ig] += self.grad[io] * in.value[ia] * s * (1.0 - s);
        }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op(Tensor::scalar(s), {a}, [](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var l1_loss(const Var& a, const Var& b) {
  check_same(a, b, "l1_loss");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("l1_loss of empty tensors");
  Tensor diff(x.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = x[i] - z[i];
    s += std::fabs(diff[i]);
  }
  trace_kinks(diff.values());
  return make_op(Tensor::scalar(s / static_cast<double>(n)), {a, b}, [diff = std::move(diff), n](Node& self) {
    const double up = self.grad[0] / static_cast<double>(n);
    for (std::size_t k = 0; k < 2; ++k) {
      Node& in = input(self, k);
      if (!in.requires_grad) continue;
      const double sgn_scale = k == 0 ? up : -up;
      Tensor& g = in.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double d = diff[i];
        g[i] += sgn_scale * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
      }
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_op(std::move(y), {a}, [](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {
// outer * axis_len * inner decomposition of a row-major shape
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[i]);
  r.len = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}
int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}
}  // namespace

Var slice(const Var& a, int axis, int begin, int end) {
  const Tensor& x = a.value();
  axis = norm_axis(axis, x.rank());
  if (begin < 0 || end > x.dim(axis) || begin > end) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     to_string(x.shape()));
  }
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor y(out_shape);
  const std::size_t n = static_cast<std::size_t>(end - begin);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.data() + (o * sp.len + begin) * sp.inner, n * sp.inner, y.data() + o * n * sp.inner);
  return make_op(std::move(y), {a}, [sp, begin, n](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = g.data() + (o * sp.len + begin) * sp.inner;
      const double* src = self.grad.data() + o * n * sp.inner;
      for (std::size_t i = 0; i < n * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const Shape& first = parts.front().shape();
  axis = norm_axis(axis, static_cast<int>(first.size()));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != first[i]) throw ShapeError("concat shape mismatch");
    out_shape[axis] += s[axis];
    lens.push_back(static_cast<std::size_t>(s[axis]));
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor y(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(x.data() + o * lens[k] * sp.inner, lens[k] * sp.inner,
                  y.data() + (o * sp.len + offset) * sp.inner);
    offset += lens[k];
  }
  return make_op(std::move(y), parts, [sp, lens](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      Node& in = input(self, k);
      if (in.requires_grad) {
        Tensor& g = in.grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = self.grad.data() + (o * sp.len + off) * sp.inner;
          double* dst = g.data() + o * lens[k] * sp.inner;
          for (std::size_t i = 0; i < lens[k] * sp.inner; ++i) dst[i] += src[i];
        }
      }
      off += lens[k];
    }
  });
}

Var pad_time(const Var& x, int left, int right, PadMode mode) {
  const Tensor& v = x.value();
  if (v.rank() != 3) throw ShapeError("pad_time expects [B, C, T]");
  if (left < 0 || right < 0) throw ShapeError("negative padding");
  const int B = v.dim(0), C = v.dim(1), T = v.dim(2);
  if ((mode == PadMode::reflect || mode == PadMode::circular) && (left >= T || right >= T)) {
    throw ShapeError("reflect/circular padding wider than input");
  }
  const int To = T + left + right;
  // Source index for every output position (-1 for zeros).
  std::vector<int> src(static_cast<std::size_t>(To));
  for (int t = 0; t < To; ++t) {
    int s = t - left;
    if (s < 0 || s >= T) {
      switch (mode) {
        case PadMode::zero: s = -1; break;
        case PadMode::reflect: s = s < 0 ? -s : 2 * (T - 1) - s; break;
        case PadMode::edge: s = s < 0 ? 0 : T - 1; break;
        case PadMode::circular: s = (s + T) % T; break;
      }
    }
    src[static_cast<std::size_t>(t)] = s;
  }
  Tensor y({B, C, To});
  for (int r = 0; r < B * C; ++r)
    for (int t = 0; t < To; ++t) {
      const int s = src[static_cast<std::size_t>(t)];
      y[static_cast<std::size_t>(r) * To + t] = s < 0 ? 0.0 : v[static_cast<std::size_t>(r) * T + s];
    }
  return make_op(std::move(y), {x}, [src, B, C, T, To](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int r = 0; r < B * C; ++r)
      for (int t = 0; t < To; ++t) {
        const int s = src[static_cast<std::size_t>(t)];
        if (s >= 0) g[static_cast<std::size_t>(r) * T + s] += self.grad[static_cast<std::size_t>(r) * To + t];
      }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    throw ShapeError("linear: x " + to_string(xv.shape()) + " w " + to_string(wv.shape()));
  }
  const int B = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
  if (b.defined() && (b.value().rank() != 1 || b.value().dim(0) != O)) throw ShapeError("linear: bias shape");
  Tensor y({B, O});
  for (int n = 0; n < B; ++n)
    for (int o = 0; o < O; ++o) {
      double acc = b.defined() ? b.value()[o] : 0.0;
      const double* xr = xv.data() + static_cast<std::size_t>(n) * I;
      const double* wr = wv.data() + static_cast<std::size_t>(o) * I;
      for (int i = 0; i < I; ++i) acc += xr[i] * wr[i];
      y[static_cast<std::size_t>(n) * O + o] = acc;
    }
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(std::move(y), std::move(inputs), [B, I, O](Node& self) {
    Node& xn = input(self, 0);
    Node& wn = input(self, 1);
    const Tensor& gy = self.grad;
    if (xn.requires_grad) {
      Tensor& g = xn.grad_buffer();
      for (int n = 0; n < B; ++n)
        for (int o = 0; o < O; ++o) {
          const double up = gy[static_cast<std::size_t>(n) * O + o];
          const double* wr = wn.value.data() + static_cast<std::size_t>(o) * I;
          double* gr = g.data() + static_cast<std::size_t>(n) * I;
          for (int i = 0; i < I; ++i) gr[i] += up * wr[i];
        }
    }
    if (wn.requires_grad) {
      Tensor& g = wn.grad_buffer();
      for (int n = 0; n < B; ++n)
        for (int o = 0; o < O; ++o) {
          const double up = gy[static_cast<std::size_t>(n) * O + o];
          const double* xr = xn.value.data() + static_cast<std::size_t>(n) * I;
          double* gr = g.data() + static_cast<std::size_t>(o) * I;
          for (int i = 0; i < I; ++i) gr[i] += up * xr[i];
        }
    }
    if (self.inputs.size() > 2) {
      Node& bn = input(self, 2);
      if (bn.requires_grad) {
        Tensor& g = bn.grad_buffer();
        for (int n = 0; n < B; ++n)
          for (int o = 0; o < O; ++o) g[o] += gy[static_cast<std::size_t>(n) * O + o];
      }
    }
  });
}

Var add_time_broadcast(const Var& x, const Var& y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (xv.rank() != 3 || yv.rank() != 2 || xv.dim(0) != yv.dim(0) || xv.dim(1) != yv.dim(1)) {
    throw ShapeError("add_time_broadcast: x " + to_string(xv.shape()) + " y " + to_string(yv.shape()));
  }
  const std::size_t rows = static_cast<std::size_t>(xv.dim(0)) * xv.dim(1);
  const std::size_t T = static_cast<std::size_t>(xv.dim(2));
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < T; ++t) out[r * T + t] += yv[r];
  return make_op(std::move(out), {x, y}, [rows, T](Node& self) {
    Node& xn = input(self, 0);
    Node& yn = input(self, 1);
    if (xn.requires_grad) xn.accumulate(self.grad);
    if (yn.requires_grad) {
      Tensor& g = yn.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t) acc += self.grad[r * T + t];
        g[r] += acc;
      }
    }
  });
}

Var add_channel_bias(const Var& x, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 3 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) throw ShapeError("add_channel_bias shape");
  const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
  Tensor out = xv;
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) out[(static_cast<std::size_t>(n) * C + c) * T + t] += bv[c];
  return make_op(std::move(out), {x, b}, [B, C, T](Node& self) {
    Node& xn = input(self, 0);
    Node& bn = input(self, 1);
    if (xn.requires_grad) xn.accumulate(self.grad);
    if (bn.requires_grad) {
      Tensor& g = bn.grad_buffer();
      for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
          for (int t = 0; t < T; ++t) g[c] += self.grad[(static_cast<std::size_t>(n) * C + c) * T + t];
    }
  });
}

Var avg_pool_time(const Var& x, int factor) {
  const Tensor& v = x.value();
  if (v.rank() != 3 || factor < 1 || v.dim(2) % factor != 0) {
    throw ShapeError("avg_pool_time: length " + std::to_string(v.dim(2)) + " not divisible by " +
                     std::to_string(factor));
  }
  const std::size_t rows = static_cast<std::size_t>(v.dim(0)) * v.dim(1);
  const int T = v.dim(2), To = T / factor;
  Tensor y({v.dim(0), v.dim(1), To});
  const double inv = 1.0 / factor;
  for (std::size_t r = 0; r < rows; ++r)
    for (int t = 0; t < To; ++t) {
      double acc = 0.0;
      for (int k = 0; k < factor; ++k) acc += v[r * T + t * factor + k];
      y[r * To + t] = acc * inv;
    }
  return make_op(std::move(y), {x}, [rows, T, To, factor, inv](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (int t = 0; t < To; ++t)
        for (int k = 0; k < factor; ++k) g[r * T + t * factor + k] += self.grad[r * To + t] * inv;
  });
}

Var mean_pool_time(const Var& x) {
  const Tensor& v = x.value();
  if (v.rank() != 3) throw ShapeError("mean_pool_time expects [B, C, T]");
  return reshape(avg_pool_time(x, v.dim(2)), {v.dim(0), v.dim(1)});
}

Var mean_std_pool(const Var& x, double eps) {
  const Tensor& v = x.value();
  if (v.rank() != 3 || v.dim(2) < 1) throw ShapeError("mean_std_pool expects [B, C, T]");
  const int B = v.dim(0), C = v.dim(1), T = v.dim(2);
  Tensor y({B, 2 * C});
  std::vector<double> mu(static_cast<std::size_t>(B) * C), sd(static_cast<std::size_t>(B) * C);
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t r = static_cast<std::size_t>(n) * C + c;
      double m = 0.0;
      for (int t = 0; t < T; ++t) m += v[r * T + t];
      m /= T;
      double var = 0.0;
      for (int t = 0; t < T; ++t) var += (v[r * T + t] - m) * (v[r * T + t] - m);
      var /= T;
      mu[r] = m;
      sd[r] = std::sqrt(var + eps);
      y[static_cast<std::size_t>(n) * 2 * C + c] = m;
      y[static_cast<std::size_t>(n) * 2 * C + C + c] = sd[r];
    }
  return make_op(std::move(y), {x}, [mu, sd, B, C, T](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t r = static_cast<std::size_t>(n) * C + c;
        const double gm = self.grad[static_cast<std::size_t>(n) * 2 * C + c];
        const double gs = self.grad[static_cast<std::size_t>(n) * 2 * C + C + c];
        for (int t = 0; t < T; ++t) {
          const double xc = in.value[r * T + t] - mu[r];
          g[r * T + t] += gm / T + gs * xc / (T * sd[r]);
        }
      }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  const Tensor& v = x.value();
  if (v.rank() != 2) throw ShapeError("l2_normalize_rows expects [B, D]");
  const int B = v.dim(0), D = v.dim(1);
  Tensor y(v.shape());
  std::vector<double> norms(static_cast<std::size_t>(B));
  for (int n = 0; n < B; ++n) {
    double s = 0.0;
    for (int d = 0; d < D; ++d) s += v[static_cast<std::size_t>(n) * D + d] * v[static_cast<std::size_t>(n) * D + d];
    norms[n] = std::sqrt(s + eps);
    for (int d = 0; d < D; ++d) y[static_cast<std::size_t>(n) * D + d] = v[static_cast<std::size_t>(n) * D + d] / norms[n];
  }
  return make_op(std::move(y), {x}, [norms, B, D](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int n = 0; n < B; ++n) {
      const std::size_t o = static_cast<std::size_t>(n) * D;
      double dot = 0.0;
      for (int d = 0; d < D; ++d) dot += self.grad[o + d] * self.value[o + d];
      for (int d = 0; d < D; ++d) g[o + d] += (self.grad[o + d] - self.value[o + d] * dot) / norms[n];
    }
  });
}

Var weight_norm(const Var& v, const Var& g) {
  const Tensor& vv = v.value();
  const Tensor& gv = g.value();
  const int O = vv.dim(0);
  if (gv.rank() != 1 || gv.dim(0) != O) throw ShapeError("weight_norm: gain shape");
  const std::size_t inner = vv.size() / static_cast<std::size_t>(O);
  std::vector<double> norms(static_cast<std::size_t>(O));
  Tensor w(vv.shape());
  for (int o = 0; o < O; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += vv[o * inner + i] * vv[o * inner + i];
    norms[o] = std::sqrt(s);
    if (norms[o] == 0.0) throw NumericError("weight_norm: zero direction vector");
    for (std::size_t i = 0; i < inner; ++i) w[o * inner + i] = gv[o] * vv[o * inner + i] / norms[o];
  }
  return make_op(std::move(w), {v, g}, [norms, O, inner](Node& self) {
    Node& vn = input(self, 0);
    Node& gn = input(self, 1);
    for (int o = 0; o < O; ++o) {
      const double nrm = norms[o];
      double dot = 0.0;  // <grad_w, v>
      for (std::size_t i = 0; i < inner; ++i) dot += self.grad[o * inner + i] * vn.value[o * inner + i];
      if (gn.requires_grad) gn.grad_buffer()[o] += dot / nrm;
      if (vn.requires_grad) {
        Tensor& gvv = vn.grad_buffer();
        const double gain = gn.value[o];
        for (std::size_t i = 0; i < inner; ++i) {
          gvv[o * inner + i] +=
              gain / nrm * (self.grad[o * inner + i] - vn.value[o * inner + i] * dot / (nrm * nrm));
        }
      }
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& v = logits.value();
  if (v.rank() != 2 || static_cast<std::size_t>(v.dim(0)) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + to_string(v.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const int N = v.dim(0), C = v.dim(1);
  Tensor prob(v.shape());
  double loss = 0.0;
  int count = 0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (int n = 0; n < N; ++n) {
    const double* row = v.data() + static_cast<std::size_t>(n) * C;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    for (int c = 0; c < C; ++c) prob[static_cast<std::size_t>(n) * C + c] = std::exp(row[c] - mx) / z;
    if (lab[n] < 0) continue;
    if (lab[n] >= C) throw ParameterError("label out of range in cross entropy");
    loss += -(row[lab[n]] - mx - std::log(z));
    ++count;
  }
  if (count == 0) throw ParameterError("cross entropy with no labelled rows");
  return make_op(Tensor::scalar(loss / count), {logits}, [prob = std::move(prob), lab, N, C, count](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double up = self.grad[0] / count;
    for (int n = 0; n < N; ++n) {
      if (lab[n] < 0) continue;
      for (int c = 0; c < C; ++c) {
        const std::size_t i = static_cast<std::size_t>(n) * C + c;
        g[i] += up * (prob[i] - (c == lab[n] ? 1.0 : 0.0));
      }
    }
  });
}

Var frame_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& v = logits.value();
  if (v.rank() != 3) throw ShapeError("frame_cross_entropy expects [B, C, T]");
  const int B = v.dim(0), C = v.dim(1), T = v.dim(2);
  if (labels.size() != static_cast<std::size_t>(B) * T) throw ShapeError("frame_cross_entropy: label count");
  // [B, C, T] -> [B*T, C]
  Tensor rows({B * T, C});
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t)
        rows[(static_cast<std::size_t>(n) * T + t) * C + c] = v[(static_cast<std::size_t>(n) * C + c) * T + t];
  Var permuted = make_op(std::move(rows), {logits}, [B, C, T](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
          g[(static_cast<std::size_t>(n) * C + c) * T + t] += self.grad[(static_cast<std::size_t>(n) * T + t) * C + c];
  });
  return softmax_cross_entropy(permuted, labels);
}

}  // namespace vcd::ad
