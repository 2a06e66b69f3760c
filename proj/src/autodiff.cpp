#include "dcl4kt/autodiff.hpp"

#include "dcl4kt/kernels.hpp"

#include <cmath>
#include <unordered_set>

namespace dcl4kt::ad {

namespace {

thread_local bool g_grad_enabled = true;

using Backward = std::function<void(Node&)>;

Var make(Matrix value, std::vector<Var> inputs, Backward bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!g_grad_enabled) return Var(n);
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (!any) return Var(n);
  n->requires_grad = true;
  for (auto& v : inputs) n->parents.push_back(v.shared());
  n->backward = std::move(bw);
  return Var(n);
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void push(Node& self, std::size_t i, const Matrix& g) {
  auto& p = parent(self, i);
  if (p.requires_grad) p.accumulate(g);
}

void push(Node& self, std::size_t i, Matrix&& g) {
  auto& p = parent(self, i);
  if (p.requires_grad) p.accumulate(std::move(g));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

void Node::ensure_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Matrix::Zero(value.rows(), value.cols());
}

void Node::accumulate(const Matrix& g) {
  if (grad.rows() != value.rows() || grad.cols() != value.cols())
    grad = g;
  else
    grad += g;
}

void Node::accumulate(Matrix&& g) {
  if (grad.rows() != value.rows() || grad.cols() != value.cols())
    grad = std::move(g);
  else
    grad += g;
}

const Matrix& Var::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Var::zero_grad() const {
  if (node_) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
}

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(n);
}

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  return Var(n);
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw InputError("backward: root must be 1x1");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && p->backward && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n != root.node()) n->grad.resize(0, 0);
  root.node()->grad = Matrix::Constant(1, 1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.size() == 0) continue;
    n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw InputError("matmul: inner dimensions differ");
  return make(a.value() * b.value(), {a, b}, [](Node& self) {
    const auto& av = parent(self, 0).value;
    const auto& bv = parent(self, 1).value;
    if (parent(self, 0).requires_grad) push(self, 0, self.grad * bv.transpose());
    if (parent(self, 1).requires_grad) push(self, 1, av.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& self) {
    push(self, 0, self.grad);
    if (parent(self, 1).requires_grad) push(self, 1, -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) push(self, 0, self.grad.cwiseProduct(parent(self, 1).value));
    if (parent(self, 1).requires_grad) push(self, 1, self.grad.cwiseProduct(parent(self, 0).value));
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a}, [s](Node& self) { push(self, 0, self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InputError("add_row: expected [1, cols] row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make(std::move(out), {a, row}, [](Node& self) {
    push(self, 0, self.grad);
    if (parent(self, 1).requires_grad) push(self, 1, self.grad.colwise().sum());
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw InputError("concat_cols: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto ac = a.cols(), bc = b.cols();
  return make(std::move(out), {a, b}, [ac, bc](Node& self) {
    if (parent(self, 0).requires_grad) push(self, 0, self.grad.leftCols(ac));
    if (parent(self, 1).requires_grad) push(self, 1, self.grad.rightCols(bc));
  });
}

Var gelu(const Var& x) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  static constexpr double k = 0.044715;
  const auto v = x.value().array();
  // tanh via exp, which Eigen vectorizes for double.
  Eigen::ArrayXXd th = 2.0 / (1.0 + (-2.0 * c * (v + k * v.cube())).exp()) - 1.0;
  Matrix out = (0.5 * v * (1.0 + th)).matrix();
  return make(std::move(out), {x}, [th = std::move(th)](Node& self) {
    const auto v = parent(self, 0).value.array();
    Eigen::ArrayXXd d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th.square()) * c * (1.0 + 3.0 * k * v.square());
    push(self, 0, (self.grad.array() * d).matrix());
  });
}

Var sigmoid(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
  return make(std::move(out), {x}, [](Node& self) {
    const auto& y = self.value;
    push(self, 0, self.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var softplus(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) { return v > 30 ? v : std::log1p(std::exp(v)); });
  return make(std::move(out), {x}, [](Node& self) {
    Matrix s = parent(self, 0).value.unaryExpr([](double v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    push(self, 0, self.grad.cwiseProduct(s));
  });
}

Var dropout(const Var& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw InputError("dropout probability must be < 1");
  Matrix keep(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < keep.size(); ++i) keep(i) = bernoulli(rng, p) ? 0.0 : s;
  Matrix out = x.value().cwiseProduct(keep);
  return make(std::move(out), {x}, [keep = std::move(keep)](Node& self) { push(self, 0, self.grad.cwiseProduct(keep)); });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto& xv = x.value();
  const Eigen::Index n = xv.cols();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Matrix xc = xv.colwise() - mu;
  Eigen::VectorXd inv_std = ((xc.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt().matrix();
  Matrix xhat = inv_std.asDiagonal() * xc;
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std = std::move(inv_std), n](Node& self) {
    const auto& g = self.grad;
    const auto& gam = parent(self, 1).value;
    if (parent(self, 1).requires_grad) push(self, 1, g.cwiseProduct(xhat).colwise().sum());
    if (parent(self, 2).requires_grad) push(self, 2, g.colwise().sum());
    if (parent(self, 0).requires_grad) {
      Matrix dxhat = (g.array().rowwise() * gam.row(0).array()).matrix();
      Eigen::VectorXd m1 = dxhat.rowwise().mean();
      Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
      Matrix dx = dxhat.colwise() - m1;
      dx -= m2.asDiagonal() * xhat;
      push(self, 0, inv_std.asDiagonal() * dx);
    }
    (void)n;
  });
}

Var gather_rows(const Var& table, const std::vector<int>& indices) {
  const auto& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(indices.size()), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int r = indices[i];
    if (r < 0 || r >= tv.rows())
      throw InputError("embedding index " + std::to_string(r) + " out of range [0," + std::to_string(tv.rows()) + ")");
  }
  // Column sweeps keep both operands contiguous in column-major storage.
  for (Eigen::Index j = 0; j < tv.cols(); ++j)
    for (std::size_t i = 0; i < indices.size(); ++i) out(static_cast<Eigen::Index>(i), j) = tv(indices[i], j);
  return make(std::move(out), {table}, [indices](Node& self) {
    auto& p = parent(self, 0);
    p.ensure_grad();
    for (Eigen::Index j = 0; j < self.grad.cols(); ++j)
      for (std::size_t i = 0; i < indices.size(); ++i) p.grad(indices[i], j) += self.grad(static_cast<Eigen::Index>(i), j);
  });
}

Var masked_mean(const Var& x, const MatrixXi& mask) {
  const Eigen::Index batch = mask.rows(), len = mask.cols();
  if (x.rows() != batch * len) throw InputError("masked_mean: rows must equal batch * len");
  Matrix out = Matrix::Zero(batch, x.cols());
  Eigen::VectorXd inv(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    int count = mask.row(b).sum();
    inv(b) = count > 0 ? 1.0 / count : 0.0;
    for (Eigen::Index t = 0; t < len; ++t)
      if (mask(b, t)) out.row(b) += x.value().row(b * len + t);
    out.row(b) *= inv(b);
  }
  return make(std::move(out), {x}, [mask, inv, len](Node& self) {
    auto& p = parent(self, 0);
    p.ensure_grad();
    for (Eigen::Index b = 0; b < mask.rows(); ++b)
      for (Eigen::Index t = 0; t < len; ++t)
        if (mask(b, t)) p.grad.row(b * len + t) += self.grad.row(b) * inv(b);
  });
}

Var sum(const Var& x) {
  Matrix out = Matrix::Constant(1, 1, x.value().sum());
  return make(std::move(out), {x}, [](Node& self) {
    const auto& p = parent(self, 0);
    push(self, 0, Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var bce_loss(const Var& probs, const Matrix& targets, const Matrix& mask) {
  if (targets.rows() != probs.rows() || targets.cols() != probs.cols() || mask.rows() != probs.rows() ||
      mask.cols() != probs.cols())
    throw InputError("bce_loss: shape mismatch");
  double value = kernels::bce<double>(probs.value(), targets, mask);
  const double count = mask.sum();
  return make(Matrix::Constant(1, 1, value), {probs}, [targets, mask, count](Node& self) {
    if (count <= 0) return;
    const auto& p = parent(self, 0).value;
    const double eps = kernels::kProbEpsilon;
    Matrix g = Matrix::Zero(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (mask(i) == 0) continue;
      double pc = std::clamp(p(i), eps, 1.0 - eps);
      g(i) = (pc - targets(i)) / (pc * (1.0 - pc)) / count;
    }
    push(self, 0, g * self.grad(0, 0));
  });
}

Var mse_loss(const Var& pred, const Matrix& target) {
  if (target.rows() != pred.rows() || target.cols() != pred.cols()) throw InputError("mse_loss: shape mismatch");
  Matrix diff = pred.value() - target;
  double value = diff.squaredNorm() / static_cast<double>(diff.size());
  return make(Matrix::Constant(1, 1, value), {pred}, [diff](Node& self) {
    push(self, 0, diff * (2.0 * self.grad(0, 0) / static_cast<double>(diff.size())));
  });
}

Var info_nce_loss(const Var& anchors, const Var& positives, const Var& negatives, double temperature,
                  bool in_batch) {
  check_same_shape(anchors, positives, "info_nce_loss");
  check_same_shape(anchors, negatives, "info_nce_loss");
  auto r = std::make_shared<kernels::InfoNceResult<double>>(
      kernels::info_nce_rows<double>(anchors.value(), positives.value(), negatives.value(), temperature, in_batch));
  const double value = r->losses.mean();
  return make(Matrix::Constant(1, 1, value), {anchors, positives, negatives}, [r, temperature](Node& self) {
    const auto b = r->losses.size();
    Eigen::VectorXd dl = Eigen::VectorXd::Constant(b, self.grad(0, 0) / static_cast<double>(b));
    auto g = kernels::info_nce_rows_backward<double>(*r, dl, temperature);
    push(self, 0, g.danchors);
    push(self, 1, g.dpositives);
    push(self, 2, g.dnegatives);
  });
}

Var monotonic_attention(const Var& q, const Var& k, const Var& v, const Var& decay, const MatrixXi& valid,
                        Eigen::Index heads, Eigen::Index col0, Eigen::Index width, bool causal) {
  const Eigen::Index batch = valid.rows(), len = valid.cols();
  if (q.rows() != batch * len) throw InputError("monotonic_attention: rows must equal batch * len");
  if (width % heads != 0) throw InputError("monotonic_attention: width not divisible by heads");
  if (decay.rows() != 1 || decay.cols() != heads) throw InputError("monotonic_attention: decay must be [1, heads]");
  const Eigen::Index hd = width / heads;
  auto weights = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(batch * heads));
  Matrix out(batch * len, width);
  for (Eigen::Index b = 0; b < batch; ++b) {
    Mask m = valid.row(b).transpose().array() != 0;
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Eigen::Index c = col0 + h * hd;
      Matrix qb = q.value().block(b * len, c, len, hd);
      Matrix kb = k.value().block(b * len, c, len, hd);
      Matrix vb = v.value().block(b * len, c, len, hd);
      auto r = kernels::monotonic_attention<double>(qb, kb, vb, m, decay.value()(0, h), causal);
      out.block(b * len, h * hd, len, hd) = r.output;
      (*weights)[static_cast<std::size_t>(b * heads + h)] = std::move(r.weights);
    }
  }
  return make(std::move(out), {q, k, v, decay},
              [weights, batch, len, heads, hd, col0, causal](Node& self) {
                auto& qn = parent(self, 0);
                auto& kn = parent(self, 1);
                auto& vn = parent(self, 2);
                auto& dn = parent(self, 3);
                for (auto* n : {&qn, &kn, &vn, &dn})
                  if (n->requires_grad) n->ensure_grad();
                for (Eigen::Index b = 0; b < batch; ++b)
                  for (Eigen::Index h = 0; h < heads; ++h) {
                    const Eigen::Index c = col0 + h * hd;
                    Matrix qb = qn.value.block(b * len, c, len, hd);
                    Matrix kb = kn.value.block(b * len, c, len, hd);
                    Matrix vb = vn.value.block(b * len, c, len, hd);
                    Matrix dout = self.grad.block(b * len, h * hd, len, hd);
                    auto g = kernels::monotonic_attention_backward<double>(
                        qb, kb, vb, (*weights)[static_cast<std::size_t>(b * heads + h)], dout, causal);
                    if (qn.requires_grad) qn.grad.block(b * len, c, len, hd) += g.dq;
                    if (kn.requires_grad) kn.grad.block(b * len, c, len, hd) += g.dk;
                    if (vn.requires_grad) vn.grad.block(b * len, c, len, hd) += g.dv;
                    if (dn.requires_grad) dn.grad(0, h) += g.ddecay;
                  }
              });
}

Var span_dynamic_conv(const Var& q, const Var& x, const Var& v, const Var& depthwise, const Var& generator,
                      const Var& bias, Eigen::Index batch, Eigen::Index heads, Eigen::Index col0,
                      Eigen::Index width) {
  if (q.rows() % batch != 0) throw InputError("span_dynamic_conv: rows not divisible by batch");
  if (width % heads != 0) throw InputError("span_dynamic_conv: width not divisible by heads");
  const Eigen::Index len = q.rows() / batch;
  kernels::SpanConvParams<double> params{depthwise.value(), generator.value(), bias.value()};
  auto fwd = std::make_shared<std::vector<kernels::SpanConvResult<double>>>();
  fwd->reserve(static_cast<std::size_t>(batch));
  Matrix out(batch * len, width);
  for (Eigen::Index b = 0; b < batch; ++b) {
    Matrix qb = q.value().block(b * len, col0, len, width);
    Matrix xb = x.value().block(b * len, col0, len, width);
    Matrix vb = v.value().block(b * len, col0, len, width);
    auto r = kernels::span_dynamic_conv<double>(qb, xb, vb, params, heads);
    out.block(b * len, 0, len, width) = r.output;
    fwd->push_back(std::move(r));
  }
  return make(std::move(out), {q, x, v, depthwise, generator, bias},
              [fwd, params = std::move(params), batch, len, heads, col0, width](Node& self) {
                auto& qn = parent(self, 0);
                auto& xn = parent(self, 1);
                auto& vn = parent(self, 2);
                for (auto* n : {&qn, &xn, &vn}) if (n->requires_grad) n->ensure_grad();
                Matrix ddw = Matrix::Zero(params.depthwise.rows(), params.depthwise.cols());
                Matrix dgen = Matrix::Zero(params.generator.rows(), params.generator.cols());
                Matrix dbias = Matrix::Zero(params.generator_bias.rows(), params.generator_bias.cols());
                for (Eigen::Index b = 0; b < batch; ++b) {
                  Matrix qb = qn.value.block(b * len, col0, len, width);
                  Matrix xb = xn.value.block(b * len, col0, len, width);
                  Matrix vb = vn.value.block(b * len, col0, len, width);
                  Matrix dout = self.grad.block(b * len, 0, len, width);
                  auto g = kernels::span_dynamic_conv_backward<double>(qb, xb, vb, params, heads,
                                                                       (*fwd)[static_cast<std::size_t>(b)], dout);
                  if (qn.requires_grad) qn.grad.block(b * len, col0, len, width) += g.dq;
                  if (xn.requires_grad) xn.grad.block(b * len, col0, len, width) += g.dx;
                  if (vn.requires_grad) vn.grad.block(b * len, col0, len, width) += g.dv;
                  ddw += g.dparams.depthwise;
                  dgen += g.dparams.generator;
                  dbias += g.dparams.generator_bias;
                }
                push(self, 3, ddw);
                push(self, 4, dgen);
                push(self, 5, dbias);
              });
}

Matrix truncated_normal(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z;
    do z = nd(rng);
    while (std::abs(z) > 2.0);
    m(i) = z * sigma;
  }
  return m;
}

Var ParameterSet::add(std::string name, Matrix init, std::vector<int> frozen_rows) {
  for (int r : frozen_rows) init.row(r).setZero();
  auto v = parameter(std::move(init));
  params_.push_back({std::move(name), v, std::move(frozen_rows)});
  return v;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void Adam::step(ParameterSet& params, double grad_scale) {
  auto& ps = params.params();
  if (m_.size() != ps.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : ps) {
      m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    Matrix g = p.var.grad() * grad_scale;
    for (int r : p.frozen_rows) g.row(r).setZero();
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseAbs2();
    Matrix update = (m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + opts_.epsilon);
    p.var.mutable_value() -= opts_.learning_rate * update;
  }
}

}  // namespace dcl4kt::ad
