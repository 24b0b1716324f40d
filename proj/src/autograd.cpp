#include "momentdet/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace momentdet::ag {

namespace {

Var make(Mat value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || p->requires_grad;
  auto node = std::make_shared<Node>(std::move(value), rg);
  if (rg) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a->rows()) +
                                "x" + std::to_string(a->cols()) + " vs " + std::to_string(b->rows()) +
                                "x" + std::to_string(b->cols()) + ")");
  }
}

}  // namespace

Var constant(Mat v) { return std::make_shared<Node>(std::move(v), false); }

Var parameter(Mat v, std::string name) {
  auto node = std::make_shared<Node>(std::move(v), true);
  node->name = std::move(name);
  return node;
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make(a->value + b->value, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
    if (b->requires_grad) b->ensure_grad() += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make(a->value - b->value, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
    if (b->requires_grad) b->ensure_grad() -= n.grad;
  });
}

Var cmul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmul");
  return make(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad.cwiseProduct(b->value);
    if (b->requires_grad) b->ensure_grad() += n.grad.cwiseProduct(a->value);
  });
}

Var cdiv(const Var& a, const Var& b) {
  check_same_shape(a, b, "cdiv");
  return make(a->value.cwiseQuotient(b->value), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad.cwiseQuotient(b->value);
    if (b->requires_grad) {
      b->ensure_grad() -=
          n.grad.cwiseProduct(a->value).cwiseQuotient(b->value.cwiseProduct(b->value));
    }
  });
}

Var scale(const Var& a, double s) {
  return make(a->value * s, {a}, [a, s](Node& n) {
    if (a->requires_grad) a->ensure_grad() += s * n.grad;
  });
}

Var add_scalar(const Var& a, double s) {
  return make(a->value.array() + s, {a}, [a](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree (" + std::to_string(a->cols()) +
                                " vs " + std::to_string(b->rows()) + ")");
  }
  return make(a->value * b->value, {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad * b->value.transpose();
    if (b->requires_grad) b->ensure_grad() += a->value.transpose() * n.grad;
  });
}

Var transpose(const Var& a) {
  return make(a->value.transpose(), {a}, [a](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad.transpose();
  });
}

Var add_rowvec(const Var& a, const Var& bias) {
  if (bias->rows() != 1 || bias->cols() != a->cols()) {
    throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
  }
  Mat out = a->value;
  out.rowwise() += bias->value.row(0);
  return make(std::move(out), {a, bias}, [a, bias](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
    if (bias->requires_grad) bias->ensure_grad().row(0) += n.grad.colwise().sum();
  });
}

Var add_scalar_var(const Var& a, const Var& s) {
  if (s->rows() != 1 || s->cols() != 1) {
    throw std::invalid_argument("add_scalar_var: scalar must be 1 x 1");
  }
  return make(a->value.array() + s->value(0, 0), {a, s}, [a, s](Node& n) {
    if (a->requires_grad) a->ensure_grad() += n.grad;
    if (s->requires_grad) s->ensure_grad()(0, 0) += n.grad.sum();
  });
}

Var slice_rows(const Var& a, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > a->rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  return make(a->value.middleRows(begin, count), {a}, [a, begin, count](Node& n) {
    if (a->requires_grad) a->ensure_grad().middleRows(begin, count) += n.grad;
  });
}

Var slice_cols(const Var& a, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > a->cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  return make(a->value.middleCols(begin, count), {a}, [a, begin, count](Node& n) {
    if (a->requires_grad) a->ensure_grad().middleCols(begin, count) += n.grad;
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0]->cols();
  for (const Var& p : parts) {
    if (p->cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p->rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p->rows()) = p->value;
    r += p->rows();
  }
  return make(std::move(out), parts, [parts](Node& n) {
    Eigen::Index r = 0;
    for (const Var& p : parts) {
      if (p->requires_grad) p->ensure_grad() += n.grad.middleRows(r, p->rows());
      r += p->rows();
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0]->rows();
  for (const Var& p : parts) {
    if (p->rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p->cols()) = p->value;
    c += p->cols();
  }
  return make(std::move(out), parts, [parts](Node& n) {
    Eigen::Index c = 0;
    for (const Var& p : parts) {
      if (p->requires_grad) p->ensure_grad() += n.grad.middleCols(c, p->cols());
      c += p->cols();
    }
  });
}

Var gather_rows(const Var& table, std::vector<int> idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), table->cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table->rows()) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(idx[i]);
  }
  return make(std::move(out), {table}, [table, idx = std::move(idx)](Node& n) {
    if (!table->requires_grad) return;
    Mat& g = table->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var mean_rows(const Var& a) {
  const Eigen::Index n = a->rows();
  // Shifted mean: identical rows pool to the first row bit-for-bit.
  Mat out = a->value.row(0);
  if (n > 1) {
    Mat diff = a->value.bottomRows(n - 1);
    diff.rowwise() -= a->value.row(0);
    out += diff.colwise().sum() / static_cast<double>(n);
  }
  return make(std::move(out), {a}, [a, n](Node& node) {
    if (a->requires_grad) {
      Mat& g = a->ensure_grad();
      const Mat share = node.grad / static_cast<double>(n);
      for (Eigen::Index r = 0; r < n; ++r) g.row(r) += share.row(0);
    }
  });
}

Var maxpool_rows(const Var& a) {
  const Eigen::Index n = a->rows();
  Mat out(1, a->cols());
  std::vector<Eigen::Index> arg(static_cast<size_t>(a->cols()), 0);
  for (Eigen::Index c = 0; c < a->cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < n; ++r) {
      if (a->value(r, c) > a->value(best, c)) best = r;
    }
    arg[static_cast<size_t>(c)] = best;
    out(0, c) = a->value(best, c);
  }
  return make(std::move(out), {a}, [a, arg = std::move(arg)](Node& node) {
    if (!a->requires_grad) return;
    Mat& g = a->ensure_grad();
    for (Eigen::Index c = 0; c < node.grad.cols(); ++c) {
      g(arg[static_cast<size_t>(c)], c) += node.grad(0, c);
    }
  });
}

Var relu(const Var& a) {
  return make(a->value.cwiseMax(0.0), {a}, [a](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad() += n.grad.cwiseProduct((a->value.array() > 0.0).cast<double>().matrix());
    }
  });
}

Var gelu(const Var& a) {
  // Exact erf form so the derivative is smooth for finite-difference checks.
  const double inv_sqrt2 = 0.7071067811865475244;
  Mat out = a->value.unaryExpr([&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make(std::move(out), {a}, [a, inv_sqrt2](Node& n) {
    if (!a->requires_grad) return;
    const double inv_sqrt_2pi = 0.3989422804014326779;
    Mat d = a->value.unaryExpr([&](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      return cdf + x * pdf;
    });
    a->ensure_grad() += n.grad.cwiseProduct(d);
  });
}

namespace {
double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  Mat out = a->value.unaryExpr([](double x) { return sigmoid_scalar(x); });
  Var node = make(out, {a}, [a](Node& n) {
    if (a->requires_grad) {
      const Mat d = n.value.array() * (1.0 - n.value.array());
      a->ensure_grad() += n.grad.cwiseProduct(d);
    }
  });
  return node;
}

Var softplus(const Var& a) {
  Mat out = a->value.unaryExpr([](double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
  });
  return make(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) {
      const Mat d = a->value.unaryExpr([](double x) { return sigmoid_scalar(x); });
      a->ensure_grad() += n.grad.cwiseProduct(d);
    }
  });
}

Var square(const Var& a) {
  return make(a->value.array().square(), {a}, [a](Node& n) {
    if (a->requires_grad) a->ensure_grad() += 2.0 * n.grad.cwiseProduct(a->value);
  });
}

Var pow_const(const Var& a, double p) {
  if (p == 0.0) {
    return make(Mat::Ones(a->rows(), a->cols()), {a}, [](Node&) {});
  }
  Mat out = a->value.unaryExpr([p](double x) { return std::pow(x, p); });
  return make(std::move(out), {a}, [a, p](Node& n) {
    if (!a->requires_grad) return;
    Mat d = a->value.unaryExpr([p](double x) {
      if (x <= 0.0 && p < 1.0) x = 1e-12;  // keep the derivative finite at the boundary
      return p * std::pow(x, p - 1.0);
    });
    a->ensure_grad() += n.grad.cwiseProduct(d);
  });
}

Var cmin(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmin");
  return make(a->value.cwiseMin(b->value), {a, b}, [a, b](Node& n) {
    const Mat pick_a = (a->value.array() <= b->value.array()).cast<double>();
    if (a->requires_grad) a->ensure_grad() += n.grad.cwiseProduct(pick_a);
    if (b->requires_grad) b->ensure_grad() += n.grad.cwiseProduct((1.0 - pick_a.array()).matrix());
  });
}

Var cmax(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmax");
  return make(a->value.cwiseMax(b->value), {a, b}, [a, b](Node& n) {
    const Mat pick_a = (a->value.array() >= b->value.array()).cast<double>();
    if (a->requires_grad) a->ensure_grad() += n.grad.cwiseProduct(pick_a);
    if (b->requires_grad) b->ensure_grad() += n.grad.cwiseProduct((1.0 - pick_a.array()).matrix());
  });
}

Var softmax_rows(const Var& a) {
  Mat out(a->rows(), a->cols());
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    const double m = a->value.row(r).maxCoeff();
    Eigen::ArrayXd e = (a->value.row(r).array() - m).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  Var node = make(out, {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    Mat& g = a->ensure_grad();
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.value.row(r));
      g.row(r) += (n.value.row(r).array() * (n.grad.row(r).array() - dot)).matrix();
    }
  });
  return node;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (gamma->rows() != 1 || gamma->cols() != x->cols() || beta->rows() != 1 ||
      beta->cols() != x->cols()) {
    throw std::invalid_argument("layer_norm: gamma/beta must be 1 x cols");
  }
  const Eigen::Index d = x->cols();
  Mat xhat(x->rows(), d);
  Eigen::VectorXd inv_std(x->rows());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    const double mu = x->value.row(r).mean();
    const double var = (x->value.row(r).array() - mu).square().sum() / static_cast<double>(d);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((x->value.row(r).array() - mu) * inv_std(r)).matrix();
  }
  Mat out = xhat;
  out.array().rowwise() *= gamma->value.row(0).array();
  out.rowwise() += beta->value.row(0);

  return make(std::move(out), {x, gamma, beta},
              [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), d](Node& n) {
                if (beta->requires_grad) beta->ensure_grad().row(0) += n.grad.colwise().sum();
                if (gamma->requires_grad) {
                  gamma->ensure_grad().row(0) += n.grad.cwiseProduct(xhat).colwise().sum();
                }
                if (!x->requires_grad) return;
                Mat& g = x->ensure_grad();
                for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
                  const Eigen::ArrayXd dxhat =
                      n.grad.row(r).array() * gamma->value.row(0).array();
                  const double m1 = dxhat.mean();
                  const double m2 = (dxhat * xhat.row(r).transpose().array()).mean();
                  g.row(r) += (inv_std(r) *
                               (dxhat - m1 - xhat.row(r).transpose().array() * m2))
                                  .matrix()
                                  .transpose();
                }
              });
}

Var sum_all(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a->value.sum();
  return make(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad(0, 0);
  });
}

void backward(const Var& root) {
  if (root->rows() != 1 || root->cols() != 1) {
    throw std::invalid_argument("backward: root must be a 1x1 scalar");
  }
  // Iterative post-order DFS; nodes fire in reverse topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* next = node->parents[child].get();
      ++child;
      if (next->requires_grad && seen.insert(next).second) {
        stack.emplace_back(next, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && node->grad.size() != 0) {
      node->backprop(*node);
    }
  }
}

}  // namespace momentdet::ag
