// Copyright 2026 The flowgrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "errors.hpp"

namespace flowgrain::ad {
namespace {

// C[m,n] += A[m,k] · B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,k] += A[m,n] · B[k,n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T · B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::ShapeMismatch,
       std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) +
                                       ", got shape " + shape_str(t.shape));
  }
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) {
    fail(ErrorKind::Config, "autodiff: operands belong to different tapes");
  }
  return *a.tape;
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& k, std::size_t stride, std::size_t pad) {
  ConvGeometry g{};
  g.n = x[0];
  g.c = x[1];
  g.h = x[2];
  g.w = x[3];
  g.o = k[0];
  g.kh = k[2];
  g.kw = k[3];
  g.stride = stride;
  g.pad = pad;
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

// col[(ci*kh + ky)*kw + kx, oy*ow + ox] = x[ci, oy*s + ky - pad, ox*s + kx - pad]
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t pixels = g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* dst = col + ((ci * g.kh + ky) * g.kw + kx) * pixels;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            double v = 0.0;
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                ix < static_cast<std::ptrdiff_t>(g.w)) {
              v = x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
            }
            dst[oy * g.ow + ox] = v;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t pixels = g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* src = col + ((ci * g.kh + ky) * g.kw + kx) * pixels;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                src[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

double stable_tanh_logderiv(double x) {
  const double a = std::abs(x);
  return 2.0 * (std::numbers::ln2 - a - std::log1p(std::exp(-2.0 * a)));
}

}  // namespace

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::MaskedMatMul: return "masked_matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddRow: return "add_row";
    case Op::MulRow: return "mul_row";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Neg: return "neg";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumAxis: return "sum_axis";
    case Op::MeanAxis: return "mean_axis";
    case Op::LogSumExpAxis: return "logsumexp_axis";
    case Op::Reshape: return "reshape";
    case Op::Gather: return "gather";
    case Op::Conv2d: return "conv2d";
    case Op::AvgPool2d: return "avg_pool2d";
    case Op::GlobalAvgPool: return "global_avg_pool";
    case Op::BlockLogMatVec: return "block_log_matvec";
    case Op::TanhLogDeriv: return "tanh_logderiv";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) { return record(Op::Constant, {}, std::move(value)); }

Var Tape::leaf(Tensor& tensor) {
  Var v = record(Op::Leaf, {}, tensor);
  nodes_.back().leaf = &tensor;
  return v;
}

Var Tape::record(Op op, std::vector<std::uint32_t> inputs, Tensor value, Aux aux) {
  value.requires_grad = false;
  value.grad.clear();
  if (!value.all_finite()) {
    fail(ErrorKind::Numerical, std::string("non-finite value produced by ") + op_name(op) +
                                   " at tape node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), nullptr, std::move(aux)});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

BackwardReport Tape::backward(Var output) {
  if (output.tape != this) fail(ErrorKind::Config, "backward: output belongs to another tape");
  const Tensor& out = nodes_[output.id].value;
  if (out.size() != 1) {
    fail(ErrorKind::ShapeMismatch,
         "backward: output must be scalar, got shape " + shape_str(out.shape));
  }
  std::vector<std::vector<double>> grads(output.id + 1);
  grads[output.id].assign(1, 1.0);
  BackwardReport report;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.op == Op::Leaf) {
      if (!node.leaf->requires_grad) {
        ++report.detached_leaves;
        continue;
      }
      if (grads[i].empty()) continue;
      if (node.leaf->grad.size() != node.leaf->data.size()) {
        node.leaf->grad.assign(node.leaf->data.size(), 0.0);
      }
      for (std::size_t j = 0; j < grads[i].size(); ++j) node.leaf->grad[j] += grads[i][j];
      ++report.leaves_updated;
      continue;
    }
    if (grads[i].empty() || node.op == Op::Constant) continue;
    backward_node(i, grads);
    grads[i].clear();
    grads[i].shrink_to_fit();
  }
  return report;
}

void Tape::backward_node(std::size_t index, std::vector<std::vector<double>>& grads) {
  const Node& node = nodes_[index];
  const std::vector<double>& g = grads[index];
  auto acc = [&](std::size_t slot) -> std::vector<double>& {
    const std::uint32_t in = node.inputs[slot];
    auto& buf = grads[in];
    if (buf.empty()) buf.assign(nodes_[in].value.size(), 0.0);
    return buf;
  };
  auto in_value = [&](std::size_t slot) -> const Tensor& {
    return nodes_[node.inputs[slot]].value;
  };
  const Tensor& y = node.value;

  switch (node.op) {
    case Op::Constant:
    case Op::Leaf:
      break;
    case Op::MatMul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      gemm_nt(g.data(), b.data.data(), acc(0).data(), m, n, k);
      gemm_tn(a.data.data(), g.data(), acc(1).data(), m, k, n);
      break;
    }
    case Op::MaskedMatMul: {
      const Tensor& x = in_value(0);
      const Tensor& w = in_value(1);
      const Tensor& mask = in_value(2);
      const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
      std::vector<double> eff(w.size());
      for (std::size_t i = 0; i < eff.size(); ++i) eff[i] = w.data[i] * mask.data[i];
      gemm_nt(g.data(), eff.data(), acc(0).data(), m, n, k);
      std::vector<double> gw(w.size(), 0.0);
      gemm_tn(x.data.data(), g.data(), gw.data(), m, k, n);
      auto& dw = acc(1);
      for (std::size_t i = 0; i < gw.size(); ++i) dw[i] += gw[i] * mask.data[i];
      break;
    }
    case Op::Add: {
      auto& da = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      auto& db = acc(1);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
      break;
    }
    case Op::Sub: {
      auto& da = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      auto& db = acc(1);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      break;
    }
    case Op::Mul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      auto& da = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.data[i];
      auto& db = acc(1);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.data[i];
      break;
    }
    case Op::AddRow: {
      const std::size_t rows = y.rows(), cols = y.cols();
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      auto& dv = acc(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dv[c] += g[r * cols + c];
      break;
    }
    case Op::MulRow: {
      const Tensor& x = in_value(0);
      const Tensor& v = in_value(1);
      const std::size_t rows = y.rows(), cols = y.cols();
      auto& dx = acc(0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += g[r * cols + c] * v.data[c];
      auto& dv = acc(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dv[c] += g[r * cols + c] * x.data[r * cols + c];
      break;
    }
    case Op::Scale: {
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * node.aux.scalar;
      break;
    }
    case Op::AddScalar:
    case Op::Reshape: {
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      break;
    }
    case Op::Exp: {
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y.data[i];
      break;
    }
    case Op::Log: {
      const Tensor& x = in_value(0);
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / x.data[i];
      break;
    }
    case Op::Tanh: {
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y.data[i] * y.data[i]);
      break;
    }
    case Op::Relu: {
      const Tensor& x = in_value(0);
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x.data[i] > 0.0) dx[i] += g[i];
      break;
    }
    case Op::Neg: {
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] -= g[i];
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      auto& dx = acc(0);
      const double s = node.op == Op::Sum ? g[0] : g[0] / static_cast<double>(dx.size());
      for (double& d : dx) d += s;
      break;
    }
    case Op::SumAxis:
    case Op::MeanAxis: {
      const Tensor& x = in_value(0);
      const std::size_t rows = x.rows(), cols = x.cols();
      const std::size_t axis = node.aux.axis;
      const double f = node.op == Op::SumAxis ? 1.0 : 1.0 / static_cast<double>(axis == 0 ? rows : cols);
      auto& dx = acc(0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += f * g[axis == 0 ? c : r];
      break;
    }
    case Op::LogSumExpAxis: {
      const Tensor& x = in_value(0);
      const std::size_t rows = x.rows(), cols = x.cols();
      const std::size_t axis = node.aux.axis;
      auto& dx = acc(0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t o = axis == 0 ? c : r;
          dx[r * cols + c] += g[o] * std::exp(x.data[r * cols + c] - y.data[o]);
        }
      }
      break;
    }
    case Op::Gather: {
      const auto& idx = *node.aux.indices;
      auto& dx = acc(0);
      for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += g[i];
      break;
    }
    case Op::Conv2d: {
      const Tensor& x = in_value(0);
      const Tensor& k = in_value(1);
      const ConvGeometry geo = conv_geometry(x.shape, k.shape, node.aux.stride, node.aux.pad);
      const std::size_t patch = geo.patch(), pixels = geo.pixels();
      const std::size_t in_stride = geo.c * geo.h * geo.w, out_stride = geo.o * pixels;
      std::vector<double> col(patch * pixels), dcol(patch * pixels);
      auto& dx = acc(0);
      auto& dk = acc(1);
      auto& db = acc(2);
      for (std::size_t b = 0; b < geo.n; ++b) {
        const double* gb = g.data() + b * out_stride;
        im2col(x.data.data() + b * in_stride, geo, col.data());
        gemm_nt(gb, col.data(), dk.data(), geo.o, pixels, patch);
        std::fill(dcol.begin(), dcol.end(), 0.0);
        gemm_tn(k.data.data(), gb, dcol.data(), geo.o, patch, pixels);
        col2im(dcol.data(), geo, dx.data() + b * in_stride);
        for (std::size_t o = 0; o < geo.o; ++o) {
          double s = 0.0;
          for (std::size_t p = 0; p < pixels; ++p) s += gb[o * pixels + p];
          db[o] += s;
        }
      }
      break;
    }
    case Op::AvgPool2d: {
      const Tensor& x = in_value(0);
      const std::size_t k = node.aux.axis;
      const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
      const std::size_t oh = y.dim(2), ow = y.dim(3);
      const double f = 1.0 / static_cast<double>(k * k);
      auto& dx = acc(0);
      for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double gv = g[(p * oh + oy) * ow + ox] * f;
            for (std::size_t dy = 0; dy < k; ++dy)
              for (std::size_t dxx = 0; dxx < k; ++dxx)
                dx[(p * h + oy * k + dy) * w + ox * k + dxx] += gv;
          }
      break;
    }
    case Op::GlobalAvgPool: {
      const Tensor& x = in_value(0);
      const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
      const double f = 1.0 / static_cast<double>(hw);
      auto& dx = acc(0);
      for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t i = 0; i < hw; ++i) dx[p * hw + i] += g[p] * f;
      break;
    }
    case Op::BlockLogMatVec: {
      const Tensor& lw = in_value(0);
      const Tensor& lv = in_value(1);
      const std::size_t d = lw.dim(0), o = lw.dim(1), p = lw.dim(2), n = lv.dim(0);
      auto& dw = acc(0);
      auto& dv = acc(1);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t q = 0; q < o; ++q) {
            const double out = y.data[(b * d + i) * o + q];
            const double gv = g[(b * d + i) * o + q];
            for (std::size_t r = 0; r < p; ++r) {
              const std::size_t wi = (i * o + q) * p + r, vi = (b * d + i) * p + r;
              const double s = gv * std::exp(lw.data[wi] + lv.data[vi] - out);
              dw[wi] += s;
              dv[vi] += s;
            }
          }
      break;
    }
    case Op::TanhLogDeriv: {
      const Tensor& x = in_value(0);
      auto& dx = acc(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (-2.0 * std::tanh(x.data[i]));
      break;
    }
  }
}

// ---- forward primitives ---------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    shape_error("matmul", av.shape, bv.shape);
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  gemm_nn(av.data.data(), bv.data.data(), out.data.data(), av.rows(), av.cols(), bv.cols());
  return t.record(Op::MatMul, {a.id, b.id}, std::move(out));
}

Var masked_matmul(Var x, Var w, Var mask) {
  Tape& t = tape_of(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& mv = mask.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.rows())
    shape_error("masked_matmul", xv.shape, wv.shape);
  if (mv.shape != wv.shape) shape_error("masked_matmul", wv.shape, mv.shape);
  std::vector<double> eff(wv.size());
  for (std::size_t i = 0; i < eff.size(); ++i) eff[i] = wv.data[i] * mv.data[i];
  Tensor out = Tensor::matrix(xv.rows(), wv.cols());
  gemm_nn(xv.data.data(), eff.data(), out.data.data(), xv.rows(), xv.cols(), wv.cols());
  return t.record(Op::MaskedMatMul, {x.id, w.id, mask.id}, std::move(out));
}

namespace {
template <class F>
Var binary_same_shape(Op op, Var a, Var b, F f) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape != bv.shape) shape_error(op_name(op), av.shape, bv.shape);
  Tensor out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(av.data[i], bv.data[i]);
  return t.record(op, {a.id, b.id}, std::move(out));
}

template <class F>
Var row_broadcast(Op op, Var x, Var v, F f) {
  Tape& t = tape_of(x, v);
  const Tensor& xv = x.value();
  const Tensor& vv = v.value();
  if (xv.rank() != 2 || vv.rank() != 1 || xv.cols() != vv.size())
    shape_error(op_name(op), xv.shape, vv.shape);
  Tensor out(xv.shape);
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out.data[r * cols + c] = f(xv.data[r * cols + c], vv.data[c]);
  return t.record(op, {x.id, v.id}, std::move(out));
}

template <class F>
Var unary(Op op, Var x, F f, Tape::Aux aux = {}) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(xv.data[i]);
  return x.tape->record(op, {x.id}, std::move(out), std::move(aux));
}
}  // namespace

Var add(Var a, Var b) { return binary_same_shape(Op::Add, a, b, [](double p, double q) { return p + q; }); }
Var sub(Var a, Var b) { return binary_same_shape(Op::Sub, a, b, [](double p, double q) { return p - q; }); }
Var mul(Var a, Var b) { return binary_same_shape(Op::Mul, a, b, [](double p, double q) { return p * q; }); }

Var add_row(Var x, Var v) { return row_broadcast(Op::AddRow, x, v, [](double p, double q) { return p + q; }); }
Var mul_row(Var x, Var v) { return row_broadcast(Op::MulRow, x, v, [](double p, double q) { return p * q; }); }

Var scale(Var x, double c) {
  Tape::Aux aux;
  aux.scalar = c;
  return unary(Op::Scale, x, [c](double v) { return v * c; }, aux);
}

Var add_scalar(Var x, double c) {
  Tape::Aux aux;
  aux.scalar = c;
  return unary(Op::AddScalar, x, [c](double v) { return v + c; }, aux);
}

Var exp(Var x) { return unary(Op::Exp, x, [](double v) { return std::exp(v); }); }

Var log(Var x) {
  const Tensor& xv = x.value();
  for (double v : xv.data) {
    if (!(v > 0.0)) {
      fail(ErrorKind::Numerical, "log: non-positive argument at tape node " + std::to_string(x.id));
    }
  }
  return unary(Op::Log, x, [](double v) { return std::log(v); });
}

Var tanh(Var x) { return unary(Op::Tanh, x, [](double v) { return std::tanh(v); }); }
Var relu(Var x) { return unary(Op::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; }); }
Var neg(Var x) { return unary(Op::Neg, x, [](double v) { return -v; }); }
Var tanh_logderiv(Var x) { return unary(Op::TanhLogDeriv, x, stable_tanh_logderiv); }

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  return x.tape->record(Op::Sum, {x.id}, Tensor::scalar(s));
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data) s += v;
  return x.tape->record(Op::Mean, {x.id}, Tensor::scalar(s / static_cast<double>(xv.size())));
}

namespace {
Var reduce_axis(Op op, Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  require_rank(op_name(op), xv, 2);
  if (axis > 1) fail(ErrorKind::ShapeMismatch, std::string(op_name(op)) + ": axis must be 0 or 1");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const std::size_t n_out = axis == 0 ? cols : rows;
  Tensor out({n_out});
  if (op == Op::LogSumExpAxis) {
    std::vector<double> mx(n_out, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        double& m = mx[axis == 0 ? c : r];
        m = std::max(m, xv.data[r * cols + c]);
      }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t o = axis == 0 ? c : r;
        out.data[o] += std::exp(xv.data[r * cols + c] - mx[o]);
      }
    for (std::size_t o = 0; o < n_out; ++o) out.data[o] = mx[o] + std::log(out.data[o]);
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.data[axis == 0 ? c : r] += xv.data[r * cols + c];
    if (op == Op::MeanAxis) {
      const double f = 1.0 / static_cast<double>(axis == 0 ? rows : cols);
      for (double& v : out.data) v *= f;
    }
  }
  Tape::Aux aux;
  aux.axis = axis;
  return x.tape->record(op, {x.id}, std::move(out), aux);
}
}  // namespace

Var sum_axis(Var x, std::size_t axis) { return reduce_axis(Op::SumAxis, x, axis); }
Var mean_axis(Var x, std::size_t axis) { return reduce_axis(Op::MeanAxis, x, axis); }
Var logsumexp_axis(Var x, std::size_t axis) { return reduce_axis(Op::LogSumExpAxis, x, axis); }

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  if (shape_size(shape) != xv.size()) shape_error("reshape", xv.shape, shape);
  return x.tape->record(Op::Reshape, {x.id}, Tensor(std::move(shape), xv.data));
}

Var gather(Var x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape) {
  const Tensor& xv = x.value();
  if (shape_size(shape) != indices->size()) shape_error("gather", {indices->size()}, shape);
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < indices->size(); ++i) {
    const std::size_t src = (*indices)[i];
    if (src >= xv.size()) shape_error("gather", xv.shape, {src});
    out.data[i] = xv.data[src];
  }
  Tape::Aux aux;
  aux.indices = std::move(indices);
  return x.tape->record(Op::Gather, {x.id}, std::move(out), std::move(aux));
}

Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  Tape& t = tape_of(x, kernel);
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1))
    shape_error("conv2d", xv.shape, kv.shape);
  if (bv.rank() != 1 || bv.size() != kv.dim(0)) shape_error("conv2d", kv.shape, bv.shape);
  if (stride == 0 || xv.dim(2) + 2 * pad < kv.dim(2) || xv.dim(3) + 2 * pad < kv.dim(3))
    shape_error("conv2d", xv.shape, kv.shape);
  const ConvGeometry geo = conv_geometry(xv.shape, kv.shape, stride, pad);
  const std::size_t patch = geo.patch(), pixels = geo.pixels();
  Tensor out({geo.n, geo.o, geo.oh, geo.ow});
  std::vector<double> col(patch * pixels);
  for (std::size_t b = 0; b < geo.n; ++b) {
    double* ob = out.data.data() + b * geo.o * pixels;
    for (std::size_t o = 0; o < geo.o; ++o) std::fill_n(ob + o * pixels, pixels, bv.data[o]);
    im2col(xv.data.data() + b * geo.c * geo.h * geo.w, geo, col.data());
    gemm_nn(kv.data.data(), col.data(), ob, geo.o, patch, pixels);
  }
  Tape::Aux aux;
  aux.stride = stride;
  aux.pad = pad;
  return t.record(Op::Conv2d, {x.id, kernel.id, bias.id}, std::move(out), aux);
}

Var avg_pool2d(Var x, std::size_t k) {
  const Tensor& xv = x.value();
  require_rank("avg_pool2d", xv, 4);
  if (k == 0 || xv.dim(2) < k || xv.dim(3) < k) shape_error("avg_pool2d", xv.shape, {k, k});
  const std::size_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  Tensor out({xv.dim(0), xv.dim(1), oh, ow});
  const double f = 1.0 / static_cast<double>(k * k);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) s += xv.data[(p * h + oy * k + dy) * w + ox * k + dx];
        out.data[(p * oh + oy) * ow + ox] = s * f;
      }
  Tape::Aux aux;
  aux.axis = k;
  return x.tape->record(Op::AvgPool2d, {x.id}, std::move(out), aux);
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank("global_avg_pool", xv, 4);
  const std::size_t nc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1)});
  for (std::size_t p = 0; p < nc; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xv.data[p * hw + i];
    out.data[p] = s / static_cast<double>(hw);
  }
  return x.tape->record(Op::GlobalAvgPool, {x.id}, std::move(out));
}

Var block_log_matvec(Var logw, Var logv) {
  Tape& t = tape_of(logw, logv);
  const Tensor& lw = logw.value();
  const Tensor& lv = logv.value();
  if (lw.rank() != 3 || lv.rank() != 3 || lw.dim(0) != lv.dim(1) || lw.dim(2) != lv.dim(2))
    shape_error("block_log_matvec", lw.shape, lv.shape);
  const std::size_t d = lw.dim(0), o = lw.dim(1), p = lw.dim(2), n = lv.dim(0);
  Tensor out({n, d, o});
  std::vector<double> terms(p);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t q = 0; q < o; ++q) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < p; ++r) {
          terms[r] = lw.data[(i * o + q) * p + r] + lv.data[(b * d + i) * p + r];
          mx = std::max(mx, terms[r]);
        }
        double s = 0.0;
        for (std::size_t r = 0; r < p; ++r) s += std::exp(terms[r] - mx);
        out.data[(b * d + i) * o + q] = mx + std::log(s);
      }
  return t.record(Op::BlockLogMatVec, {logw.id, logv.id}, std::move(out));
}

}  // namespace flowgrain::ad
