#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace momentdet {

using Mat = Eigen::MatrixXd;

namespace ag {

class Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation graph. Non-parameter nodes are rebuilt on
/// every forward pass; parameter nodes persist and accumulate gradients
/// until zero_grad.
class Node {
 public:
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::string name;  // nonempty only for parameters
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // routes this->grad into the parents

  Node(Mat v, bool rg) : value(std::move(v)), requires_grad(rg) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }

  Mat& ensure_grad() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
  void zero_grad() {
    if (grad.size() != 0) grad.setZero();
  }
};

Var constant(Mat v);
Var parameter(Mat v, std::string name);

// arithmetic
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);  // elementwise
Var cdiv(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_rowvec(const Var& a, const Var& bias);    // bias: 1 x cols, broadcast over rows
Var add_scalar_var(const Var& a, const Var& s);   // s: 1 x 1, broadcast everywhere

// structure
Var slice_rows(const Var& a, int begin, int count);
Var slice_cols(const Var& a, int begin, int count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& table, std::vector<int> idx);

// pooling over all rows; the shifted forms return the first row exactly when
// every row is identical
Var mean_rows(const Var& a);     // 1 x cols
Var maxpool_rows(const Var& a);  // 1 x cols

// elementwise nonlinearities
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
Var pow_const(const Var& a, double p);  // elementwise a^p, a >= 0
Var cmin(const Var& a, const Var& b);
Var cmax(const Var& a, const Var& b);

// row-structured
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// reduction
Var sum_all(const Var& a);  // 1 x 1

/// Reverse-mode sweep from a 1x1 root. Gradients accumulate, so zero
/// parameter grads between steps.
void backward(const Var& root);

}  // namespace ag
}  // namespace momentdet
