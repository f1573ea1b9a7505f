// Central finite-difference gradient verification for scalar-valued graphs.
#pragma once

#include <cmath>
#include <functional>

#include "monokd/tensor.hpp"

namespace monokd {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::size_t n_checked = 0;
  bool pass = false;
};

// f must rebuild the graph from the leaf's current values on every call and
// return a scalar. Relative error is normalized by max(1, |analytic|, |numeric|)
// so near-zero gradients are compared absolutely.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor leaf,
                                  double h = 1e-5, double tol = 1e-5) {
  Tensor loss = f(leaf);
  leaf.node()->grad.assign(leaf.numel(), 0.0);
  backward(loss);
  std::vector<double> analytic = leaf.node()->grad;

  GradCheckReport rep;
  rep.n_checked = leaf.numel();
  auto& v = leaf.value_mut();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f(leaf).item();
    v[i] = keep - h;
    const double dn = f(leaf).item();
    v[i] = keep;
    const double numeric = (up - dn) / (2.0 * h);
    const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
    const double rel = std::fabs(analytic[i] - numeric) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace monokd
