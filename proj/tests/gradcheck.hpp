#pragma once

#include "dcl4kt/autodiff.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace testing {

/// Worst relative error ||analytic - numeric|| / (||analytic|| + ||numeric||)
/// over `params`, with central differences of step `h`. `f` must rebuild the
/// graph from the current parameter values and return a 1x1 result.
inline double max_relative_error(const std::function<dcl4kt::ad::Var()>& f, std::vector<dcl4kt::ad::Var> params,
                                 double h = 1e-6) {
  using dcl4kt::ad::Matrix;
  for (auto& p : params) p.zero_grad();
  dcl4kt::ad::backward(f());
  double worst = 0;
  for (auto& p : params) {
    Matrix analytic = p.grad();
    Matrix numeric(p.rows(), p.cols());
    dcl4kt::ad::NoGradGuard guard;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        const double orig = p.value()(i, j);
        p.mutable_value()(i, j) = orig + h;
        const double up = f().scalar();
        p.mutable_value()(i, j) = orig - h;
        const double down = f().scalar();
        p.mutable_value()(i, j) = orig;
        numeric(i, j) = (up - down) / (2 * h);
      }
    const double denom = std::max(analytic.norm() + numeric.norm(), 1e-12);
    worst = std::max(worst, (analytic - numeric).norm() / denom);
  }
  return worst;
}

/// sum(out .* weights): a scalar whose gradient w.r.t. out is `weights`.
inline dcl4kt::ad::Var project(const dcl4kt::ad::Var& out, const dcl4kt::ad::Matrix& weights) {
  return dcl4kt::ad::sum(dcl4kt::ad::mul(out, dcl4kt::ad::constant(weights)));
}

}  // namespace testing
