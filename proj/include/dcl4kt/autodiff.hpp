#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
// A Var is a handle to a graph node; every op records a closure that pushes
// the node's gradient into its parents. Graphs are freed with their handles.

#include "dcl4kt/random.hpp"
#include "dcl4kt/types.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dcl4kt::ad {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Adds `g` into grad, allocating it on first use.
  void accumulate(const Matrix& g);
  void accumulate(Matrix&& g);
  template <typename Derived>
  void accumulate_block(Eigen::Index r, Eigen::Index c, const Eigen::MatrixBase<Derived>& g) {
    ensure_grad();
    grad.block(r, c, g.rows(), g.cols()) += g;
  }
  void ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Gradient after backward(); a zero matrix if none flowed here.
  const Matrix& grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  void zero_grad() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
/// Leaf whose gradient accumulates across backward() calls until zeroed.
Var parameter(Matrix value);

/// Back-propagates from a 1x1 root.
void backward(const Var& root);

/// While alive, ops on this thread build no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Elementwise and linear algebra.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a + row broadcast over rows; `row` is [1, cols].
Var add_row(const Var& a, const Var& row);
Var linear(const Var& x, const Var& w, const Var& b);
Var concat_cols(const Var& a, const Var& b);

Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var dropout(const Var& x, double p, Rng& rng);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// out.row(i) = table.row(indices[i]).
Var gather_rows(const Var& table, const std::vector<int>& indices);

/// x is [batch * len, d] (row b * len + t); returns [batch, d] means over rows
/// whose mask(b, t) is set. Fully masked rows give zeros.
Var masked_mean(const Var& x, const MatrixXi& mask);

Var sum(const Var& x);
Var mean(const Var& x);

// Losses (1x1 results).
/// Masked mean BCE of probabilities against 0/1 targets; probabilities are
/// clamped to [1e-7, 1 - 1e-7].
Var bce_loss(const Var& probs, const Matrix& targets, const Matrix& mask);
Var mse_loss(const Var& pred, const Matrix& target);
/// Mean batched InfoNCE (see kernels::info_nce_rows).
Var info_nce_loss(const Var& anchors, const Var& positives, const Var& negatives, double temperature,
                  bool in_batch);

/// Multi-head monotonic attention over columns [col0, col0 + width) of the
/// [batch * len, d] projections. `decay` is [1, heads] and must be >= 0.
Var monotonic_attention(const Var& q, const Var& k, const Var& v, const Var& decay, const MatrixXi& valid,
                        Eigen::Index heads, Eigen::Index col0, Eigen::Index width, bool causal = true);

/// Multi-head causal span dynamic convolution over columns [col0, col0 + width).
/// depthwise [K, width], generator [width, K], bias [heads, K].
Var span_dynamic_conv(const Var& q, const Var& x, const Var& v, const Var& depthwise, const Var& generator,
                      const Var& bias, Eigen::Index batch, Eigen::Index heads, Eigen::Index col0,
                      Eigen::Index width);

// ---------------------------------------------------------------------------

/// Truncated normal (resampled beyond two sigma).
Matrix truncated_normal(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng);

struct Parameter {
  std::string name;
  Var var;
  /// Rows whose values stay fixed (padding rows of embedding tables).
  std::vector<int> frozen_rows;
};

class ParameterSet {
 public:
  Var add(std::string name, Matrix init, std::vector<int> frozen_rows = {});
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter* find(const std::string& name) const;
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}
  /// Applies one update from the accumulated gradients (scaled by grad_scale).
  void step(ParameterSet& params, double grad_scale = 1.0);
  long long steps() const { return t_; }

 private:
  AdamOptions opts_;
  long long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace dcl4kt::ad
