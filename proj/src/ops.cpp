// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fastcf/errors.hpp"

namespace fastcf {
namespace {

using detail::GradSink;
using detail::Node;

Tensor record(std::string_view op, Shape shape, std::vector<float> value,
              std::initializer_list<Tensor> inputs, detail::BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    node->op = op;
    for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

const std::vector<float>& in_value(const Node& self, std::size_t i) {
  return self.inputs[i]->value;
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

constexpr std::string_view binary_name(BinaryKind k) {
  switch (k) {
    case BinaryKind::kAdd: return "add";
    case BinaryKind::kSub: return "sub";
    case BinaryKind::kMul: return "mul";
    case BinaryKind::kDiv: return "div";
  }
  return "?";
}

// 0: identical shapes, 1: a is scalar, 2: b is scalar.
int broadcast_mode(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return 0;
  if (a.rank() == 0) return 1;
  if (b.rank() == 0) return 2;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                   " and " + shape_string(b.shape()));
}

Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const int mode = broadcast_mode(a, b, binary_name(kind));
  const Shape& shape = mode == 1 ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  auto av = a.data();
  auto bv = b.data();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[mode == 1 ? 0 : i];
    const double y = bv[mode == 2 ? 0 : i];
    double r = 0;
    switch (kind) {
      case BinaryKind::kAdd: r = x + y; break;
      case BinaryKind::kSub: r = x - y; break;
      case BinaryKind::kMul: r = x * y; break;
      case BinaryKind::kDiv: r = x / y; break;
    }
    out[i] = static_cast<float>(r);
  }
  return record(binary_name(kind), shape, std::move(out), {a, b},
                [kind, mode](const Node& self, std::span<const double> g, GradSink& sink) {
                  const auto& x = in_value(self, 0);
                  const auto& y = in_value(self, 1);
                  const std::size_t n = g.size();
                  for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t ia = mode == 1 ? 0 : i;
                    const std::size_t ib = mode == 2 ? 0 : i;
                    double da = 0, db = 0;
                    switch (kind) {
                      case BinaryKind::kAdd: da = g[i]; db = g[i]; break;
                      case BinaryKind::kSub: da = g[i]; db = -g[i]; break;
                      case BinaryKind::kMul: da = g[i] * y[ib]; db = g[i] * x[ia]; break;
                      case BinaryKind::kDiv: {
                        const double yy = y[ib];
                        da = g[i] / yy;
                        db = -g[i] * x[ia] / (yy * yy);
                        break;
                      }
                    }
                    if (sink.wants(0)) sink.at(0)[ia] += da;
                    if (sink.wants(1)) sink.at(1)[ib] += db;
                  }
                });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Tensor unary(std::string_view name, const Tensor& a, F f, D dfdx) {
  auto av = a.data();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = static_cast<float>(f(double(av[i])));
  return record(name, a.shape(), std::move(out), {a},
                [dfdx](const Node& self, std::span<const double> g, GradSink& sink) {
                  const auto& x = in_value(self, 0);
                  auto dx = sink.at(0);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    dx[i] += g[i] * dfdx(double(x[i]), double(self.value[i]));
                  }
                });
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryKind::kDiv, a, b); }
Tensor add(const Tensor& a, float b) { return binary(BinaryKind::kAdd, a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, float b) { return binary(BinaryKind::kMul, a, Tensor::scalar(b)); }
Tensor neg(const Tensor& a) { return mul(a, -1.0f); }

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2 * x; });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
  return unary("silu", a, [](double x) { return x * sigmoid(x); },
               [](double x, double) {
                 const double s = sigmoid(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Tensor sum(const Tensor& a) {
  double acc = 0;
  for (float v : a.data()) acc += v;
  return record("sum", {}, {static_cast<float>(acc)}, {a},
                [](const Node&, std::span<const double> g, GradSink& sink) {
                  for (double& d : sink.at(0)) d += g[0];
                });
}

Tensor mean(const Tensor& a) {
  double acc = 0;
  for (float v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  return record("mean", {}, {static_cast<float>(acc / n)}, {a},
                [n](const Node&, std::span<const double> g, GradSink& sink) {
                  for (double& d : sink.at(0)) d += g[0] / n;
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto av = a.data();
  auto bv = b.data();
  std::vector<float> out(m * n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const float* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) acc[j] += aip * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<float>(acc[j]);
  }
  return record("matmul", {m, n}, std::move(out), {a, b},
                [m, k, n](const Node& self, std::span<const double> g, GradSink& sink) {
                  const auto& A = in_value(self, 0);
                  const auto& B = in_value(self, 1);
                  if (sink.wants(0)) {
                    auto dA = sink.at(0);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                        dA[i * k + p] += acc;
                      }
                    }
                  }
                  if (sink.wants(1)) {
                    auto dB = sink.at(1);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = A[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * g[i * n + j];
                      }
                    }
                  }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  auto av = a.data();
  return record("reshape", std::move(shape), std::vector<float>(av.begin(), av.end()), {a},
                [](const Node&, std::span<const double> g, GradSink& sink) {
                  auto d = sink.at(0);
                  for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                });
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 1) {
    throw ShapeError("log_softmax expects rank-1 logits, got " + shape_string(logits.shape()));
  }
  auto z = logits.data();
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (float v : z) s += std::exp(double(v) - m);
  const double lse = m + std::log(s);
  std::vector<float> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<float>(double(z[i]) - lse);
  return record("log_softmax", logits.shape(), std::move(out), {logits},
                [](const Node& self, std::span<const double> g, GradSink& sink) {
                  // Recompute in double from the inputs; stored outputs are float.
                  const auto& z = in_value(self, 0);
                  const double m = *std::max_element(z.begin(), z.end());
                  double s = 0;
                  for (float v : z) s += std::exp(double(v) - m);
                  double gsum = 0;
                  for (double v : g) gsum += v;
                  auto d = sink.at(0);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    d[i] += g[i] - std::exp(double(z[i]) - m) / s * gsum;
                  }
                });
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1) {
    throw ShapeError("softmax expects rank-1 logits, got " + shape_string(logits.shape()));
  }
  auto z = logits.data();
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> e(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (e[i] = std::exp(double(z[i]) - m));
  std::vector<float> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<float>(e[i] / s);
  return record("softmax", logits.shape(), std::move(out), {logits},
                [](const Node& self, std::span<const double> g, GradSink& sink) {
                  const auto& z = in_value(self, 0);
                  const double m = *std::max_element(z.begin(), z.end());
                  std::vector<double> p(z.size());
                  double s = 0;
                  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(double(z[i]) - m));
                  double dot = 0;
                  for (std::size_t i = 0; i < z.size(); ++i) dot += g[i] * (p[i] /= s);
                  auto d = sink.at(0);
                  for (std::size_t i = 0; i < z.size(); ++i) d[i] += p[i] * (g[i] - dot);
                });
}

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.numel()) {
    throw IndexError("pick: index " + std::to_string(index) + " out of range for " +
                     shape_string(a.shape()));
  }
  return record("pick", {}, {a.data()[index]}, {a},
                [index](const Node&, std::span<const double> g, GradSink& sink) {
                  sink.at(0)[index] += g[0];
                });
}

Tensor row(const Tensor& table, std::size_t index) {
  if (table.rank() != 2) {
    throw ShapeError("row expects a rank-2 table, got " + shape_string(table.shape()));
  }
  const std::size_t rows = table.shape()[0], cols = table.shape()[1];
  if (index >= rows) {
    throw IndexError("row " + std::to_string(index) + " out of range (" +
                     std::to_string(rows) + " rows)");
  }
  auto tv = table.data();
  std::vector<float> out(tv.begin() + index * cols, tv.begin() + (index + 1) * cols);
  return record("row", {cols}, std::move(out), {table},
                [index, cols](const Node&, std::span<const double> g, GradSink& sink) {
                  auto d = sink.at(0);
                  for (std::size_t j = 0; j < cols; ++j) d[index * cols + j] += g[j];
                });
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, oh, ow;

  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return oh * ow; }
};

// Unfolds x into a [cin*k*k x oh*ow] matrix; out-of-image taps are zero.
void im2col(const ConvGeometry& g, std::span<const float> x, std::vector<float>& cols) {
  cols.assign(g.rows() * g.cols(), 0.0f);
  for (std::size_t i = 0; i < g.cin; ++i) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        float* dst = &cols[((i * g.k + ky) * g.k + kx) * g.cols()];
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const float* src = &x[(i * g.h + iy) * g.w];
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[oy * g.ow + ox] = src[ix];
          }
        }
      }
    }
  }
}

// Adds the columns back onto the image positions they were read from.
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> x) {
  for (std::size_t i = 0; i < g.cin; ++i) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = &cols[((i * g.k + ky) * g.k + kx) * g.cols()];
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = &x[(i * g.h + iy) * g.w];
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

double dot(const double* a, const float* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || kernels.rank() != 4 || kernels.shape()[1] != x.shape()[0] ||
      kernels.shape()[2] != kernels.shape()[3]) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " incompatible with kernels " +
                     shape_string(kernels.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry geo{x.shape()[0], x.shape()[1], x.shape()[2], kernels.shape()[0],
                   kernels.shape()[2], stride, padding, 0, 0};
  if (geo.k % 2 == 0) throw ShapeError("conv2d: kernel extent must be odd");
  if (geo.k > geo.h + 2 * padding || geo.k > geo.w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(geo.k) + " larger than padded input " +
                     shape_string(x.shape()));
  }
  geo.oh = (geo.h + 2 * padding - geo.k) / stride + 1;
  geo.ow = (geo.w + 2 * padding - geo.k) / stride + 1;

  std::vector<float> cols;
  im2col(geo, x.data(), cols);
  auto kv = kernels.data();
  const std::size_t P = geo.cols(), kk = geo.k * geo.k;
  std::vector<float> out(geo.cout * P);
  // Taps of one input channel are summed in float, then folded into a
  // float64 accumulator across input channels.
  std::vector<double> acc(P);
  std::vector<float> part(P);
  for (std::size_t o = 0; o < geo.cout; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < geo.cin; ++i) {
      std::fill(part.begin(), part.end(), 0.0f);
      for (std::size_t r = i * kk; r < (i + 1) * kk; ++r) {
        const float wt = kv[o * geo.rows() + r];
        const float* c = &cols[r * P];
        float* pp = part.data();
        for (std::size_t p = 0; p < P; ++p) pp[p] += wt * c[p];
      }
      for (std::size_t p = 0; p < P; ++p) acc[p] += part[p];
    }
    for (std::size_t p = 0; p < P; ++p) out[o * P + p] = static_cast<float>(acc[p]);
  }
  return record(
      "conv2d", {geo.cout, geo.oh, geo.ow}, std::move(out), {x, kernels},
      [geo](const Node& self, std::span<const double> g, GradSink& sink) {
        const auto& K = in_value(self, 1);
        const std::size_t P = geo.cols(), R = geo.rows();
        std::vector<float> cols;
        if (sink.wants(1)) {
          im2col(geo, in_value(self, 0), cols);
          auto dK = sink.at(1);
          for (std::size_t o = 0; o < geo.cout; ++o) {
            for (std::size_t r = 0; r < R; ++r) dK[o * R + r] += dot(&g[o * P], &cols[r * P], P);
          }
        }
        if (sink.wants(0)) {
          std::vector<double> dcols(R * P, 0.0);
          for (std::size_t o = 0; o < geo.cout; ++o) {
            const double* go = &g[o * P];
            for (std::size_t r = 0; r < R; ++r) {
              const double wt = K[o * R + r];
              double* dc = &dcols[r * P];
              for (std::size_t p = 0; p < P; ++p) dc[p] += wt * go[p];
            }
          }
          col2im(geo, dcols, sink.at(0));
        }
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 3 || bias.rank() != 1 || bias.shape()[0] != x.shape()[0]) {
    throw ShapeError("add_channel_bias: " + shape_string(x.shape()) + " with bias " +
                     shape_string(bias.shape()));
  }
  const std::size_t c = x.shape()[0], plane = x.shape()[1] * x.shape()[2];
  auto xv = x.data();
  auto bv = bias.data();
  std::vector<float> out(xv.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < plane; ++j) {
      out[ch * plane + j] = static_cast<float>(double(xv[ch * plane + j]) + bv[ch]);
    }
  }
  return record("add_channel_bias", x.shape(), std::move(out), {x, bias},
                [c, plane](const Node&, std::span<const double> g, GradSink& sink) {
                  if (sink.wants(0)) {
                    auto d = sink.at(0);
                    for (std::size_t j = 0; j < g.size(); ++j) d[j] += g[j];
                  }
                  if (sink.wants(1)) {
                    auto d = sink.at(1);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      double acc = 0;
                      for (std::size_t j = 0; j < plane; ++j) acc += g[ch * plane + j];
                      d[ch] += acc;
                    }
                  }
                });
}

Tensor on_backward(const Tensor& a, std::function<void()> hook) {
  auto av = a.data();
  return record("on_backward", a.shape(), std::vector<float>(av.begin(), av.end()), {a},
                [hook = std::move(hook)](const Node&, std::span<const double> g, GradSink& sink) {
                  hook();
                  auto d = sink.at(0);
                  for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                });
}

Tensor custom_unary(std::string_view name, const Tensor& input, Tensor value, VjpFn vjp) {
  auto vv = value.data();
  return record(name, value.shape(), std::vector<float>(vv.begin(), vv.end()), {input},
                [vjp = std::move(vjp)](const Node&, std::span<const double> g, GradSink& sink) {
                  std::vector<double> d = vjp(g);
                  auto dst = sink.at(0);
                  if (d.size() != dst.size()) {
                    throw ShapeError("custom op returned gradient of wrong size");
                  }
                  for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i];
                });
}

}  // namespace fastcf
