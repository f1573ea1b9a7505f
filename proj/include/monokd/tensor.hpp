// Minimal deterministic f64 tensor arithmetic with reverse-mode
// differentiation. Graphs are define-by-run: every op allocates a node that
// records its parents and a backward closure. Graphs are rebuilt every step;
// values are never mutated in place once recorded.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "monokd/common.hpp"

namespace monokd {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value once touched by backward
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

  static Tensor zeros(const Shape& s, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    n->shape = s;
    n->value.assign(shape_numel(s), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }
  static Tensor from(const Shape& s, std::vector<double> data, bool requires_grad = false) {
    if (data.size() != shape_numel(s))
      throw ShapeMismatch("from", std::to_string(data.size()) + " values", shape_str(s));
    auto n = std::make_shared<TensorNode>();
    n->shape = s;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }
  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t numel() const { return n_->numel(); }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& value() const { return n_->value; }
  std::vector<double>& value_mut() { return n_->value; }
  const std::vector<double>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  double item() const {
    if (n_->numel() != 1) throw NotScalar();
    return n_->value[0];
  }

  // Cuts the tensor out of the graph: same values, no parents, no grad flow.
  Tensor detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = n_->shape;
    n->value = n_->value;
    return Tensor(n);
  }

  std::shared_ptr<TensorNode> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode> n_;
};

namespace detail {

inline std::shared_ptr<TensorNode> make_op(const char* op, const Shape& shape,
                                           std::vector<Tensor> parents) {
  auto n = std::make_shared<TensorNode>();
  n->op = op;
  n->shape = shape;
  n->value.assign(shape_numel(shape), 0.0);
  n->is_leaf = false;
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.node()->requires_grad;
  }
  return n;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch(op, shape_str(b.shape()), shape_str(a.shape()));
}

// Accumulates src into parent's grad if the parent participates in autodiff.
inline void accum(TensorNode& parent, const std::vector<double>& src) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  for (std::size_t i = 0; i < src.size(); ++i) parent.grad[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  auto n = detail::make_op("add", a.shape(), {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] + bv[i];
  n->backward_fn = [](TensorNode& self) {
    detail::accum(*self.parents[0], self.grad);
    detail::accum(*self.parents[1], self.grad);
  };
  return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  auto n = detail::make_op("sub", a.shape(), {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] - bv[i];
  n->backward_fn = [](TensorNode& self) {
    detail::accum(*self.parents[0], self.grad);
    auto& p1 = *self.parents[1];
    if (p1.requires_grad) {
      p1.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p1.grad[i] -= self.grad[i];
    }
  };
  return Tensor(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  auto n = detail::make_op("mul", a.shape(), {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] * bv[i];
  n->backward_fn = [](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  };
  return Tensor(n);
}

// Scalar-tensor broadcast is the only implicit broadcast in the engine.
inline Tensor scale(const Tensor& a, double c) {
  auto n = detail::make_op("scale", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] * c;
  n->backward_fn = [c](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * c;
  };
  return Tensor(n);
}

inline Tensor add_scalar(const Tensor& a, double c) {
  auto n = detail::make_op("add_scalar", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] + c;
  n->backward_fn = [](TensorNode& self) { detail::accum(*self.parents[0], self.grad); };
  return Tensor(n);
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// Multiplies every channel of x (C,H,W) by a single spatial weight map
// (1,H,W). Written as an explicit op so no silent broadcasting exists.
inline Tensor mul_spatial(const Tensor& x, const Tensor& w) {
  if (x.shape().size() != 3 || w.shape().size() != 3 || w.shape()[0] != 1 ||
      w.shape()[1] != x.shape()[1] || w.shape()[2] != x.shape()[2])
    throw ShapeMismatch("mul_spatial", shape_str(w.shape()), "(1," + std::to_string(x.shape()[1]) + "," + std::to_string(x.shape()[2]) + ")");
  const int C = x.shape()[0];
  const std::size_t hw = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
  auto n = detail::make_op("mul_spatial", x.shape(), {x, w});
  const auto& xv = x.value();
  const auto& wv = w.value();
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i) n->value[c * hw + i] = xv[c * hw + i] * wv[i];
  n->backward_fn = [C, hw](TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          px.grad[c * hw + i] += self.grad[c * hw + i] * pw.value[i];
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          pw.grad[i] += self.grad[c * hw + i] * px.value[c * hw + i];
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
  auto n = detail::make_op("relu", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] > 0.0 ? av[i] : 0.0;
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    // subgradient 0 at 0
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
  };
  return Tensor(n);
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  auto n = detail::make_op("sigmoid", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = stable_sigmoid(av[i]);
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.value[i];
      p.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  };
  return Tensor(n);
}

inline Tensor abs(const Tensor& a) {
  auto n = detail::make_op("abs", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::fabs(av[i]);
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double s = p.value[i] > 0.0 ? 1.0 : (p.value[i] < 0.0 ? -1.0 : 0.0);
      p.grad[i] += self.grad[i] * s;
    }
  };
  return Tensor(n);
}

inline Tensor square(const Tensor& a) {
  auto n = detail::make_op("square", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] * av[i];
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * 2.0 * p.value[i];
  };
  return Tensor(n);
}

inline Tensor sqrt(const Tensor& a) {
  auto n = detail::make_op("sqrt", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::sqrt(av[i]);
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * 0.5 / self.value[i];
  };
  return Tensor(n);
}

inline Tensor exp(const Tensor& a) {
  auto n = detail::make_op("exp", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::exp(av[i]);
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * self.value[i];
  };
  return Tensor(n);
}

inline Tensor log(const Tensor& a) {
  auto n = detail::make_op("log", a.shape(), {a});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::log(std::max(av[i], 1e-300));
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] / std::max(p.value[i], 1e-300);
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Reductions and shape ops.
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  auto n = detail::make_op("sum", {1}, {a});
  double s = 0.0;
  for (double v : a.value()) s += v;
  n->value[0] = s;
  n->backward_fn = [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  };
  return Tensor(n);
}

inline Tensor mean(const Tensor& a) {
  std::size_t m = a.numel();
  return scale(sum(a), 1.0 / static_cast<double>(m));
}

inline Tensor reshape(const Tensor& a, const Shape& s) {
  if (shape_numel(s) != a.numel())
    throw ShapeMismatch("reshape", shape_str(a.shape()), shape_str(s));
  auto n = detail::make_op("reshape", s, {a});
  n->value = a.value();
  n->backward_fn = [](TensorNode& self) { detail::accum(*self.parents[0], self.grad); };
  return Tensor(n);
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[1] != b.shape()[1] ||
      a.shape()[2] != b.shape()[2])
    throw ShapeMismatch("concat", shape_str(b.shape()), shape_str(a.shape()));
  Shape s{a.shape()[0] + b.shape()[0], a.shape()[1], a.shape()[2]};
  auto n = detail::make_op("concat", s, {a, b});
  std::copy(a.value().begin(), a.value().end(), n->value.begin());
  std::copy(b.value().begin(), b.value().end(), n->value.begin() + a.numel());
  std::size_t na = a.numel();
  n->backward_fn = [na](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < na; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = na; i < self.grad.size(); ++i) pb.grad[i - na] += self.grad[i];
    }
  };
  return Tensor(n);
}

// Channel range [c0, c1) of a (C,H,W) tensor.
inline Tensor slice_channels(const Tensor& a, int c0, int c1) {
  if (a.shape().size() != 3 || c0 < 0 || c1 > a.shape()[0] || c0 >= c1)
    throw ShapeMismatch("slice", "[" + std::to_string(c0) + "," + std::to_string(c1) + ")",
                        shape_str(a.shape()));
  const std::size_t hw = static_cast<std::size_t>(a.shape()[1]) * a.shape()[2];
  Shape s{c1 - c0, a.shape()[1], a.shape()[2]};
  auto n = detail::make_op("slice", s, {a});
  std::copy(a.value().begin() + c0 * hw, a.value().begin() + c1 * hw, n->value.begin());
  n->backward_fn = [c0, hw](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[c0 * hw + i] += self.grad[i];
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Matrix multiply: y = op(A) * op(B) with optional transposes.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeMismatch("matmul", shape_str(a.shape()) + "x" + shape_str(b.shape()), "rank-2");
  int am = trans_a ? a.shape()[1] : a.shape()[0];
  int ak = trans_a ? a.shape()[0] : a.shape()[1];
  int bk = trans_b ? b.shape()[1] : b.shape()[0];
  int bn = trans_b ? b.shape()[0] : b.shape()[1];
  if (ak != bk) throw ShapeMismatch("matmul", shape_str(b.shape()), "inner dim " + std::to_string(ak));
  auto n = detail::make_op("matmul", {am, bn}, {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  auto ea = [&](int i, int k) { return trans_a ? av[k * am + i] : av[i * ak + k]; };
  auto eb = [&](int k, int j) { return trans_b ? bv[j * bk + k] : bv[k * bn + j]; };
  for (int i = 0; i < am; ++i)
    for (int k = 0; k < ak; ++k) {
      double x = ea(i, k);
      if (x == 0.0) continue;
      for (int j = 0; j < bn; ++j) n->value[i * bn + j] += x * eb(k, j);
    }
  n->backward_fn = [am, ak, bn, trans_a, trans_b](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = dY * op(B)^T, laid out back through trans_a
      for (int i = 0; i < am; ++i)
        for (int k = 0; k < ak; ++k) {
          double s = 0.0;
          for (int j = 0; j < bn; ++j) {
            double bkj = trans_b ? pb.value[j * ak + k] : pb.value[k * bn + j];
            s += g[i * bn + j] * bkj;
          }
          if (trans_a) pa.grad[k * am + i] += s;
          else pa.grad[i * ak + k] += s;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int k = 0; k < ak; ++k)
        for (int j = 0; j < bn; ++j) {
          double s = 0.0;
          for (int i = 0; i < am; ++i) {
            double aik = trans_a ? pa.value[k * am + i] : pa.value[i * ak + k];
            s += aik * g[i * bn + j];
          }
          if (trans_b) pb.grad[j * ak + k] += s;
          else pb.grad[k * bn + j] += s;
        }
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// conv2d: x (IC,H,W), w (OC,IC,KH,KW), optional bias (OC). Supports the 3x3
// pad-1 stride-1/2 and 1x1 pad-0 stride-1 cases the detector uses, plus any
// odd kernel with explicit stride/pad. im2col buffer is kept for backward.
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  if (x.shape().size() != 3 || w.shape().size() != 4)
    throw ShapeMismatch("conv2d", shape_str(x.shape()) + "/" + shape_str(w.shape()),
                        "(IC,H,W)/(OC,IC,KH,KW)");
  const int IC = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int OC = w.shape()[0], KH = w.shape()[2], KW = w.shape()[3];
  if (w.shape()[1] != IC)
    throw ShapeMismatch("conv2d", "weight in_c " + std::to_string(w.shape()[1]),
                        std::to_string(IC));
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != OC))
    throw ShapeMismatch("conv2d", shape_str(bias.shape()), "(" + std::to_string(OC) + ")");
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeMismatch("conv2d", shape_str(x.shape()), "larger input");
  const int K = IC * KH * KW;
  const std::size_t N = static_cast<std::size_t>(OH) * OW;

  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * N, 0.0);
  {
    const double* xv = x.value().data();
    double* cv = col->data();
    for (int ic = 0; ic < IC; ++ic)
      for (int kh = 0; kh < KH; ++kh)
        for (int kw = 0; kw < KW; ++kw) {
          const int k = (ic * KH + kh) * KW + kw;
          double* crow = cv + static_cast<std::size_t>(k) * N;
          for (int oh = 0; oh < OH; ++oh) {
            const int ih = oh * stride + kh - pad;
            if (ih < 0 || ih >= H) continue;
            const double* xrow = xv + (static_cast<std::size_t>(ic) * H + ih) * W;
            double* cdst = crow + static_cast<std::size_t>(oh) * OW;
            for (int ow = 0; ow < OW; ++ow) {
              const int iw = ow * stride + kw - pad;
              if (iw >= 0 && iw < W) cdst[ow] = xrow[iw];
            }
          }
        }
  }

  std::vector<Tensor> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  auto n = detail::make_op("conv2d", {OC, OH, OW}, parents);
  {
    double* yv = n->value.data();
    const double* wv = w.value().data();
    const double* cv = col->data();
    for (int oc = 0; oc < OC; ++oc) {
      double* yrow = yv + static_cast<std::size_t>(oc) * N;
      if (bias.defined()) {
        const double b = bias.value()[oc];
        for (std::size_t i = 0; i < N; ++i) yrow[i] = b;
      }
      const double* wrow = wv + static_cast<std::size_t>(oc) * K;
      for (int k = 0; k < K; ++k) {
        const double wk = wrow[k];
        if (wk == 0.0) continue;
        const double* crow = cv + static_cast<std::size_t>(k) * N;
        for (std::size_t i = 0; i < N; ++i) yrow[i] += wk * crow[i];
      }
    }
  }

  const bool has_bias = bias.defined();
  n->backward_fn = [col, IC, H, W, OC, KH, KW, OH, OW, K, N, stride, pad,
                    has_bias](TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const double* g = self.grad.data();
    if (pw.requires_grad) {
      pw.ensure_grad();
      const double* cv = col->data();
      for (int oc = 0; oc < OC; ++oc) {
        const double* grow = g + static_cast<std::size_t>(oc) * N;
        double* dwrow = pw.grad.data() + static_cast<std::size_t>(oc) * K;
        for (int k = 0; k < K; ++k) {
          const double* crow = cv + static_cast<std::size_t>(k) * N;
          double s = 0.0;
          for (std::size_t i = 0; i < N; ++i) s += grow[i] * crow[i];
          dwrow[k] += s;
        }
      }
    }
    if (has_bias) {
      auto& pb = *self.parents[2];
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (int oc = 0; oc < OC; ++oc) {
          const double* grow = g + static_cast<std::size_t>(oc) * N;
          double s = 0.0;
          for (std::size_t i = 0; i < N; ++i) s += grow[i];
          pb.grad[oc] += s;
        }
      }
    }
    if (px.requires_grad) {
      px.ensure_grad();
      std::vector<double> dcol(static_cast<std::size_t>(K) * N, 0.0);
      const double* wv = pw.value.data();
      for (int k = 0; k < K; ++k) {
        double* drow = dcol.data() + static_cast<std::size_t>(k) * N;
        for (int oc = 0; oc < OC; ++oc) {
          const double wk = wv[static_cast<std::size_t>(oc) * K + k];
          if (wk == 0.0) continue;
          const double* grow = g + static_cast<std::size_t>(oc) * N;
          for (std::size_t i = 0; i < N; ++i) drow[i] += wk * grow[i];
        }
      }
      // col2im scatter
      for (int ic = 0; ic < IC; ++ic)
        for (int kh = 0; kh < KH; ++kh)
          for (int kw = 0; kw < KW; ++kw) {
            const int k = (ic * KH + kh) * KW + kw;
            const double* drow = dcol.data() + static_cast<std::size_t>(k) * N;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride + kh - pad;
              if (ih < 0 || ih >= H) continue;
              double* xrow = px.grad.data() + (static_cast<std::size_t>(ic) * H + ih) * W;
              const double* dsrc = drow + static_cast<std::size_t>(oh) * OW;
              for (int ow = 0; ow < OW; ++ow) {
                const int iw = ow * stride + kw - pad;
                if (iw >= 0 && iw < W) xrow[iw] += dsrc[ow];
              }
            }
          }
    }
  };
  return Tensor(n);
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  // 3x3 -> stride 1 pad 1; 1x1 -> stride 1 pad 0.
  int k = w.shape()[2];
  return conv2d(x, w, bias, 1, k == 1 ? 0 : k / 2);
}

// ---------------------------------------------------------------------------
// Pooling and resampling.
// ---------------------------------------------------------------------------

inline Tensor maxpool2(const Tensor& x) {
  if (x.shape().size() != 3 || x.shape()[1] % 2 || x.shape()[2] % 2)
    throw ShapeMismatch("maxpool2", shape_str(x.shape()), "(C,2m,2n)");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int OH = H / 2, OW = W / 2;
  auto n = detail::make_op("maxpool2", {C, OH, OW}, {x});
  auto arg = std::make_shared<std::vector<std::size_t>>(n->value.size());
  const auto& xv = x.value();
  for (int c = 0; c < C; ++c)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        const std::size_t base = (static_cast<std::size_t>(c) * H + 2 * oh) * W + 2 * ow;
        std::size_t best = base;
        double bv = xv[base];
        const std::size_t cand[3] = {base + 1, base + W, base + W + 1};
        for (std::size_t idx : cand)
          if (xv[idx] > bv) {  // first max wins on ties
            bv = xv[idx];
            best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(c) * OH + oh) * OW + ow;
        n->value[o] = bv;
        (*arg)[o] = best;
      }
  n->backward_fn = [arg](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < self.grad.size(); ++o) p.grad[(*arg)[o]] += self.grad[o];
  };
  return Tensor(n);
}

// Non-overlapping average pooling; window must divide the spatial dims.
inline Tensor avgpool(const Tensor& x, int kh, int kw) {
  if (x.shape().size() != 3 || x.shape()[1] % kh || x.shape()[2] % kw)
    throw ShapeMismatch("avgpool", shape_str(x.shape()),
                        "spatial dims divisible by " + std::to_string(kh) + "x" + std::to_string(kw));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int OH = H / kh, OW = W / kw;
  const double inv = 1.0 / (kh * kw);
  auto n = detail::make_op("avgpool", {C, OH, OW}, {x});
  const auto& xv = x.value();
  for (int c = 0; c < C; ++c)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        double s = 0.0;
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j)
            s += xv[(static_cast<std::size_t>(c) * H + oh * kh + i) * W + ow * kw + j];
        n->value[(static_cast<std::size_t>(c) * OH + oh) * OW + ow] = s * inv;
      }
  n->backward_fn = [C, H, W, OH, OW, kh, kw, inv](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double g = self.grad[(static_cast<std::size_t>(c) * OH + oh) * OW + ow] * inv;
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j)
              p.grad[(static_cast<std::size_t>(c) * H + oh * kh + i) * W + ow * kw + j] += g;
        }
  };
  return Tensor(n);
}

// Averages an (C,H,W) map into an RxR grid of region vectors; cell boundaries
// are floor(i*H/R) so H and W only need to be >= R.
inline Tensor region_pool(const Tensor& x, int r) {
  if (x.shape().size() != 3 || x.shape()[1] < r || x.shape()[2] < r)
    throw ShapeMismatch("region_pool", shape_str(x.shape()), "spatial dims >= " + std::to_string(r));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  auto bound = [](int i, int n, int r) { return static_cast<int>(static_cast<long>(i) * n / r); };
  auto n = detail::make_op("region_pool", {C, r, r}, {x});
  const auto& xv = x.value();
  for (int c = 0; c < C; ++c)
    for (int ri = 0; ri < r; ++ri)
      for (int rj = 0; rj < r; ++rj) {
        const int h0 = bound(ri, H, r), h1 = bound(ri + 1, H, r);
        const int w0 = bound(rj, W, r), w1 = bound(rj + 1, W, r);
        double s = 0.0;
        for (int i = h0; i < h1; ++i)
          for (int j = w0; j < w1; ++j) s += xv[(static_cast<std::size_t>(c) * H + i) * W + j];
        n->value[(static_cast<std::size_t>(c) * r + ri) * r + rj] =
            s / ((h1 - h0) * (w1 - w0));
      }
  n->backward_fn = [C, H, W, r, bound](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int ri = 0; ri < r; ++ri)
        for (int rj = 0; rj < r; ++rj) {
          const int h0 = bound(ri, H, r), h1 = bound(ri + 1, H, r);
          const int w0 = bound(rj, W, r), w1 = bound(rj + 1, W, r);
          double g = self.grad[(static_cast<std::size_t>(c) * r + ri) * r + rj] /
                     ((h1 - h0) * (w1 - w0));
          for (int i = h0; i < h1; ++i)
            for (int j = w0; j < w1; ++j)
              p.grad[(static_cast<std::size_t>(c) * H + i) * W + j] += g;
        }
  };
  return Tensor(n);
}

// Bilinear x2 upsampling, half-pixel centers (align_corners = false).
inline Tensor upsample_x2(const Tensor& x) {
  if (x.shape().size() != 3) throw ShapeMismatch("upsample_x2", shape_str(x.shape()), "(C,H,W)");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int OH = 2 * H, OW = 2 * W;
  auto n = detail::make_op("upsample_x2", {C, OH, OW}, {x});
  auto taps = [](int d, int s, int& i0, int& i1, double& w1) {
    double src = 0.5 * (d + 0.5) - 0.5;
    double f = std::floor(src);
    i0 = std::max(0, std::min(s - 1, static_cast<int>(f)));
    i1 = std::max(0, std::min(s - 1, static_cast<int>(f) + 1));
    w1 = src - f;
  };
  const auto& xv = x.value();
  for (int c = 0; c < C; ++c)
    for (int oh = 0; oh < OH; ++oh) {
      int r0, r1;
      double wr;
      taps(oh, H, r0, r1, wr);
      for (int ow = 0; ow < OW; ++ow) {
        int c0, c1;
        double wc;
        taps(ow, W, c0, c1, wc);
        const std::size_t base = static_cast<std::size_t>(c) * H;
        double v = (1 - wr) * (1 - wc) * xv[(base + r0) * W + c0] +
                   (1 - wr) * wc * xv[(base + r0) * W + c1] +
                   wr * (1 - wc) * xv[(base + r1) * W + c0] +
                   wr * wc * xv[(base + r1) * W + c1];
        n->value[(static_cast<std::size_t>(c) * OH + oh) * OW + ow] = v;
      }
    }
  n->backward_fn = [C, H, W, OH, OW, taps](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh) {
        int r0, r1;
        double wr;
        taps(oh, H, r0, r1, wr);
        for (int ow = 0; ow < OW; ++ow) {
          int c0, c1;
          double wc;
          taps(ow, W, c0, c1, wc);
          double g = self.grad[(static_cast<std::size_t>(c) * OH + oh) * OW + ow];
          const std::size_t base = static_cast<std::size_t>(c) * H;
          p.grad[(base + r0) * W + c0] += (1 - wr) * (1 - wc) * g;
          p.grad[(base + r0) * W + c1] += (1 - wr) * wc * g;
          p.grad[(base + r1) * W + c0] += wr * (1 - wc) * g;
          p.grad[(base + r1) * W + c1] += wr * wc * g;
        }
      }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Axis ops: softmax and l2 normalization along one axis.
// ---------------------------------------------------------------------------

namespace detail {

// Calls fn(base_offset, stride) for every fiber along `axis`.
template <typename Fn>
void for_each_fiber(const Shape& shape, int axis, Fn&& fn) {
  const int rank = static_cast<int>(shape.size());
  std::size_t stride = 1;
  for (int d = axis + 1; d < rank; ++d) stride *= shape[d];
  std::size_t inner = stride;
  std::size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  const std::size_t alen = shape[axis];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) fn(o * alen * inner + i, stride);
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= static_cast<int>(x.shape().size()))
    throw ShapeMismatch("softmax", "axis " + std::to_string(axis), shape_str(x.shape()));
  auto n = detail::make_op("softmax", x.shape(), {x});
  const auto& xv = x.value();
  const std::size_t alen = x.shape()[axis];
  detail::for_each_fiber(x.shape(), axis, [&](std::size_t base, std::size_t stride) {
    double mx = xv[base];
    for (std::size_t a = 1; a < alen; ++a) mx = std::max(mx, xv[base + a * stride]);
    double denom = 0.0;
    for (std::size_t a = 0; a < alen; ++a) denom += std::exp(xv[base + a * stride] - mx);
    for (std::size_t a = 0; a < alen; ++a)
      n->value[base + a * stride] = std::exp(xv[base + a * stride] - mx) / denom;
  });
  const Shape shp = x.shape();
  n->backward_fn = [shp, axis, alen](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    detail::for_each_fiber(shp, axis, [&](std::size_t base, std::size_t stride) {
      double dot = 0.0;
      for (std::size_t a = 0; a < alen; ++a)
        dot += self.grad[base + a * stride] * self.value[base + a * stride];
      for (std::size_t a = 0; a < alen; ++a) {
        std::size_t i = base + a * stride;
        p.grad[i] += self.value[i] * (self.grad[i] - dot);
      }
    });
  };
  return Tensor(n);
}

// Normalizes each fiber along `axis` to unit L2 norm; all-zero fibers map to
// zero (and receive zero gradient), which realizes the zero-vector cosine
// convention downstream.
inline Tensor l2_normalize(const Tensor& x, int axis) {
  if (axis < 0 || axis >= static_cast<int>(x.shape().size()))
    throw ShapeMismatch("l2_normalize", "axis " + std::to_string(axis), shape_str(x.shape()));
  auto n = detail::make_op("l2_normalize", x.shape(), {x});
  const auto& xv = x.value();
  const std::size_t alen = x.shape()[axis];
  detail::for_each_fiber(x.shape(), axis, [&](std::size_t base, std::size_t stride) {
    double sq = 0.0;
    for (std::size_t a = 0; a < alen; ++a) {
      double v = xv[base + a * stride];
      sq += v * v;
    }
    if (sq <= 0.0) return;  // zero fiber stays zero
    double inv = 1.0 / std::sqrt(sq);
    for (std::size_t a = 0; a < alen; ++a) n->value[base + a * stride] = xv[base + a * stride] * inv;
  });
  const Shape shp = x.shape();
  n->backward_fn = [shp, axis, alen](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    detail::for_each_fiber(shp, axis, [&](std::size_t base, std::size_t stride) {
      double sq = 0.0;
      for (std::size_t a = 0; a < alen; ++a) {
        double v = p.value[base + a * stride];
        sq += v * v;
      }
      if (sq <= 0.0) return;
      double inv = 1.0 / std::sqrt(sq);
      double dot = 0.0;
      for (std::size_t a = 0; a < alen; ++a)
        dot += self.grad[base + a * stride] * self.value[base + a * stride];
      for (std::size_t a = 0; a < alen; ++a) {
        std::size_t i = base + a * stride;
        p.grad[i] += (self.grad[i] - self.value[i] * dot) * inv;
      }
    });
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Reverse pass. Repeated calls without zeroing leaf grads accumulate.
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw NotScalar();
  if (!loss.node()->requires_grad) return;

  // Iterative post-order DFS; parents visited in index order so the schedule
  // is deterministic.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch per call; leaf grads persist and accumulate.
  for (TensorNode* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
    else n->ensure_grad();
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Named parameters.
// ---------------------------------------------------------------------------

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

class ParamStore {
 public:
  Tensor add(const std::string& name, const Shape& shape, std::vector<double> init,
             bool trainable = true) {
    if (index_.count(name)) throw ArchMismatch("duplicate parameter name: " + name);
    Tensor t = Tensor::from(shape, std::move(init), trainable);
    index_[name] = params_.size();
    params_.push_back(Parameter{name, t, trainable});
    return t;
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArchMismatch("no such parameter: " + name);
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArchMismatch("no such parameter: " + name);
    return params_[it->second];
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) {
      auto n = p.tensor.node();
      n->grad.assign(n->value.size(), 0.0);
    }
  }

  void set_trainable(bool value) {
    for (auto& p : params_) {
      p.trainable = value;
      p.tensor.node()->requires_grad = value;
    }
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Disables gradient tracking for every parameter in a store while in scope,
// so forwards inside it build values only, no backward graph. Restores the
// original flags on exit.
class NoGradGuard {
 public:
  explicit NoGradGuard(const ParamStore& ps) : ps_(&ps) {
    saved_.reserve(ps.params().size());
    for (const auto& p : ps.params()) {
      saved_.push_back(p.tensor.node()->requires_grad);
      p.tensor.node()->requires_grad = false;
    }
  }
  ~NoGradGuard() {
    const auto& params = ps_->params();
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i].tensor.node()->requires_grad = saved_[i];
  }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  const ParamStore* ps_;
  std::vector<char> saved_;
};

}  // namespace monokd
