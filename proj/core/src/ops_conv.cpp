// SPDX-License-Identifier: Apache-2.0
#include "vcd/ops_conv.hpp"

#include <Eigen/Core>

#include "vcd/error.hpp"

namespace vcd::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Gather {
  int channels, length, kernel, stride, dilation, pad_left, out_len;
};

// col[c * K + k, j] = in[c, j * stride + k * dilation - pad_left]
void im2col(const double* in, const Gather& g, double* col) {
  for (int c = 0; c < g.channels; ++c)
    for (int k = 0; k < g.kernel; ++k) {
      double* row = col + (static_cast<std::size_t>(c) * g.kernel + k) * g.out_len;
      const double* src = in + static_cast<std::size_t>(c) * g.length;
      const int offset = k * g.dilation - g.pad_left;
      for (int j = 0; j < g.out_len; ++j) {
        const int s = j * g.stride + offset;
        row[j] = (s >= 0 && s < g.length) ? src[s] : 0.0;
      }
    }
}

// Adjoint of im2col: accumulates col back into in.
void col2im(const double* col, const Gather& g, double* in) {
  for (int c = 0; c < g.channels; ++c)
    for (int k = 0; k < g.kernel; ++k) {
      const double* row = col + (static_cast<std::size_t>(c) * g.kernel + k) * g.out_len;
      double* dst = in + static_cast<std::size_t>(c) * g.length;
      const int offset = k * g.dilation - g.pad_left;
      for (int j = 0; j < g.out_len; ++j) {
        const int s = j * g.stride + offset;
        if (s >= 0 && s < g.length) dst[s] += row[j];
      }
    }
}

void check_bias(const Var& b, int channels) {
  if (b.defined() && (b.value().rank() != 1 || b.value().dim(0) != channels)) {
    throw ShapeError("convolution bias must have shape [" + std::to_string(channels) + "]");
  }
}

}  // namespace

int conv1d_output_length(int length, int kernel, const Conv1dOptions& opt) {
  const int span = opt.dilation * (kernel - 1) + 1;
  const int padded = length + opt.padding_left + opt.padding_right;
  if (padded < span) return 0;
  return (padded - span) / opt.stride + 1;
}

Var conv1d(const Var& x, const Var& w, const Var& b, const Conv1dOptions& opt) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(1) != wv.dim(1)) {
    throw ShapeError("conv1d: input " + to_string(xv.shape()) + " weight " + to_string(wv.shape()));
  }
  if (opt.stride < 1 || opt.dilation < 1) throw ParameterError("conv1d: stride and dilation must be positive");
  const int B = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2), Co = wv.dim(0), K = wv.dim(2);
  check_bias(b, Co);
  const int To = conv1d_output_length(T, K, opt);
  if (To < 1) throw ShapeError("conv1d: input length " + std::to_string(T) + " too short for kernel");
  const Gather g{Ci, T, K, opt.stride, opt.dilation, opt.padding_left, To};

  Tensor y({B, Co, To});
  std::vector<double> col(static_cast<std::size_t>(Ci) * K * To);
  ConstMapMat W(wv.data(), Co, static_cast<Eigen::Index>(Ci) * K);
  for (int n = 0; n < B; ++n) {
    im2col(xv.data() + static_cast<std::size_t>(n) * Ci * T, g, col.data());
    MapMat Y(y.data() + static_cast<std::size_t>(n) * Co * To, Co, To);
    Y.noalias() = W * ConstMapMat(col.data(), static_cast<Eigen::Index>(Ci) * K, To);
    if (b.defined())
      for (int c = 0; c < Co; ++c) Y.row(c).array() += b.value()[c];
  }

  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(std::move(y), std::move(inputs), [g, B, Co](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    const int Ci = g.channels, T = g.length, K = g.kernel, To = g.out_len;
    const Eigen::Index rows = static_cast<Eigen::Index>(Ci) * K;
    std::vector<double> col(static_cast<std::size_t>(rows) * To);
    ConstMapMat W(wn.value.data(), Co, rows);
    for (int n = 0; n < B; ++n) {
      ConstMapMat G(self.grad.data() + static_cast<std::size_t>(n) * Co * To, Co, To);
      if (wn.requires_grad) {
        im2col(xn.value.data() + static_cast<std::size_t>(n) * Ci * T, g, col.data());
        MapMat(wn.grad_buffer().data(), Co, rows).noalias() += G * ConstMapMat(col.data(), rows, To).transpose();
      }
      if (xn.requires_grad) {
        MapMat(col.data(), rows, To).noalias() = W.transpose() * G;
        col2im(col.data(), g, xn.grad_buffer().data() + static_cast<std::size_t>(n) * Ci * T);
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (int n = 0; n < B; ++n)
        for (int c = 0; c < Co; ++c) {
          const double* row = self.grad.data() + (static_cast<std::size_t>(n) * Co + c) * To;
          double acc = 0.0;
          for (int t = 0; t < To; ++t) acc += row[t];
          gb[c] += acc;
        }
    }
  });
}

Var conv_transpose1d(const Var& x, const Var& w, const Var& b, int stride, int padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(1) != wv.dim(0)) {
    throw ShapeError("conv_transpose1d: input " + to_string(xv.shape()) + " weight " + to_string(wv.shape()));
  }
  if (stride < 1 || padding < 0) throw ParameterError("conv_transpose1d: bad stride/padding");
  const int B = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2), Co = wv.dim(1), K = wv.dim(2);
  check_bias(b, Co);
  const int To = (T - 1) * stride - 2 * padding + K;
  if (To < 1) throw ShapeError("conv_transpose1d: empty output");
  // The scatter of a transposed convolution is the col2im of a strided
  // convolution whose output length is the transposed input length.
  const Gather g{Co, To, K, stride, 1, padding, T};
  const Eigen::Index rows = static_cast<Eigen::Index>(Co) * K;

  Tensor y({B, Co, To});
  std::vector<double> col(static_cast<std::size_t>(rows) * T);
  ConstMapMat W(wv.data(), Ci, rows);
  for (int n = 0; n < B; ++n) {
    ConstMapMat X(xv.data() + static_cast<std::size_t>(n) * Ci * T, Ci, T);
    MapMat(col.data(), rows, T).noalias() = W.transpose() * X;
    double* out = y.data() + static_cast<std::size_t>(n) * Co * To;
    col2im(col.data(), g, out);
    if (b.defined())
      for (int c = 0; c < Co; ++c)
        for (int t = 0; t < To; ++t) out[static_cast<std::size_t>(c) * To + t] += b.value()[c];
  }

  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(std::move(y), std::move(inputs), [g, B, Ci, rows](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    const int Co = g.channels, To = g.length, T = g.out_len;
    std::vector<double> col(static_cast<std::size_t>(rows) * T);
    ConstMapMat W(wn.value.data(), Ci, rows);
    for (int n = 0; n < B; ++n) {
      im2col(self.grad.data() + static_cast<std::size_t>(n) * Co * To, g, col.data());
      ConstMapMat C(col.data(), rows, T);
      if (xn.requires_grad) {
        MapMat(xn.grad_buffer().data() + static_cast<std::size_t>(n) * Ci * T, Ci, T).noalias() += W * C;
      }
      if (wn.requires_grad) {
        ConstMapMat X(xn.value.data() + static_cast<std::size_t>(n) * Ci * T, Ci, T);
        MapMat(wn.grad_buffer().data(), Ci, rows).noalias() += X * C.transpose();
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (int n = 0; n < B; ++n)
        for (int c = 0; c < Co; ++c) {
          const double* row = self.grad.data() + (static_cast<std::size_t>(n) * Co + c) * To;
          double acc = 0.0;
          for (int t = 0; t < To; ++t) acc += row[t];
          gb[c] += acc;
        }
    }
  });
}

}  // namespace vcd::ad
