// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "bevsim/tensor.hpp"

namespace bevsim::ad {

namespace {

enum class Kind { Add, Sub, Mul, Div };

const char* name_of(Kind k) {
  switch (k) {
    case Kind::Add: return "add";
    case Kind::Sub: return "sub";
    case Kind::Mul: return "mul";
    case Kind::Div: return "div";
  }
  return "?";
}

// Equal shapes, or one side holding a single element.
Tensor binary(Kind kind, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  require(a.shape() == b.shape() || a_scalar || b_scalar, "{}: shape mismatch {} vs {}", name_of(kind),
          to_string(a.shape()), to_string(b.shape()));
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const int64_t n = numel(shape);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) {
    const double x = ad[a_scalar ? 0 : i];
    const double y = bd[b_scalar ? 0 : i];
    switch (kind) {
      case Kind::Add: out[i] = x + y; break;
      case Kind::Sub: out[i] = x - y; break;
      case Kind::Mul: out[i] = x * y; break;
      case Kind::Div: out[i] = x / y; break;
    }
  }
  return make_result(shape, std::move(out), {a, b}, [kind, a_scalar, b_scalar, n](const Node& node) {
    const auto g = node.grad_out();
    const auto& av = node.inputs[0]->data;
    const auto& bv = node.inputs[1]->data;
    double* ga = node.grad_in(0);
    double* gb = node.grad_in(1);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t ia = a_scalar ? 0 : i;
      const int64_t ib = b_scalar ? 0 : i;
      double da = 0.0;
      double db = 0.0;
      switch (kind) {
        case Kind::Add: da = g[i]; db = g[i]; break;
        case Kind::Sub: da = g[i]; db = -g[i]; break;
        case Kind::Mul: da = g[i] * bv[ib]; db = g[i] * av[ia]; break;
        case Kind::Div:
          da = g[i] / bv[ib];
          db = -g[i] * av[ia] / (bv[ib] * bv[ib]);
          break;
      }
      if (ga) ga[ia] += da;
      if (gb) gb[ib] += db;
    }
  });
}

// y = f(x) with dy/dx expressed through x and y.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D df) {
  const int64_t n = x.numel();
  const auto xd = x.data();
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), {x}, [df, n](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const auto g = node.grad_out();
    const auto& xv = node.inputs[0]->data;
    const auto& yv = node.output->data;
    for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(Kind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Kind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Kind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(Kind::Div, a, b); }

Tensor add(const Tensor& a, double b) {
  return unary(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor neg(const Tensor& x) {
  return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor pow_abs(const Tensor& x, double p) {
  require(p >= 1.0, "pow_abs exponent must be >= 1, got {}", p);
  return unary(
      x, [p](double v) { return std::pow(std::abs(v), p); },
      [p](double v, double) {
        if (v == 0.0) return 0.0;
        const double s = v > 0.0 ? 1.0 : -1.0;
        return s * p * std::pow(std::abs(v), p - 1.0);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp bounds reversed: [{}, {}]", lo, hi);
  return unary(
      x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor smooth_l1(const Tensor& d) {
  return unary(
      d,
      [](double v) {
        const double a = std::abs(v);
        return a < 1.0 ? 0.5 * v * v : a - 0.5;
      },
      [](double v, double) { return std::abs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0); });
}

}  // namespace bevsim::ad
