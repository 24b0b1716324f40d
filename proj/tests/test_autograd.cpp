#include <doctest.h>

#include <cmath>
#include <functional>

#include "momentdet/autograd.hpp"
#include "momentdet/rng.hpp"

using namespace momentdet;
using namespace momentdet::ag;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

// Central finite differences of f against the analytic gradient of `leaf`.
void gradcheck(const std::vector<Var>& leaves, const std::function<Var()>& f,
               double step = 1e-5, double tol = 1e-6) {
  Var out = f();
  REQUIRE(out->rows() == 1);
  REQUIRE(out->cols() == 1);
  for (const Var& leaf : leaves) leaf->zero_grad();
  backward(out);

  for (const Var& leaf : leaves) {
    leaf->ensure_grad();
    for (Eigen::Index r = 0; r < leaf->rows(); ++r) {
      for (Eigen::Index c = 0; c < leaf->cols(); ++c) {
        const double saved = leaf->value(r, c);
        leaf->value(r, c) = saved + step;
        const double up = f()->value(0, 0);
        leaf->value(r, c) = saved - step;
        const double down = f()->value(0, 0);
        leaf->value(r, c) = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = leaf->grad(r, c);
        const double err = std::abs(numeric - analytic);
        const double rel = err / std::max({1.0, std::abs(numeric), std::abs(analytic)});
        INFO("leaf ", leaf->name, " entry (", r, ",", c, "): analytic ", analytic, " numeric ",
             numeric);
        CHECK(rel <= tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("matmul / add / bias gradients") {
  Rng rng(1);
  Var a = parameter(random_mat(rng, 3, 4), "a");
  Var b = parameter(random_mat(rng, 4, 2), "b");
  Var bias = parameter(random_mat(rng, 1, 2), "bias");
  gradcheck({a, b, bias}, [&] { return sum_all(square(add_rowvec(matmul(a, b), bias))); });
}

TEST_CASE("elementwise op gradients") {
  Rng rng(2);
  Var a = parameter(random_mat(rng, 3, 3), "a");
  Var b = parameter(random_mat(rng, 3, 3).array().abs().matrix() + Mat::Constant(3, 3, 0.5), "b");
  gradcheck({a, b}, [&] { return sum_all(cmul(sigmoid(a), cdiv(a, b))); });
  gradcheck({a}, [&] { return sum_all(gelu(a)); });
  gradcheck({a}, [&] { return sum_all(softplus(scale(a, 2.0))); });
  gradcheck({a, b}, [&] { return sum_all(cmul(cmin(a, b), cmax(a, b))); });
}

TEST_CASE("pow_const gradients and the zero-exponent case") {
  Rng rng(3);
  Var p = parameter(random_mat(rng, 2, 3).array().abs().matrix() + Mat::Constant(2, 3, 0.2), "p");
  gradcheck({p}, [&] { return sum_all(pow_const(p, 2.0)); });
  gradcheck({p}, [&] { return sum_all(pow_const(p, 0.5)); });

  Var zero_pow = pow_const(p, 0.0);
  CHECK(zero_pow->value == Mat::Ones(2, 3));
  p->zero_grad();
  backward(sum_all(zero_pow));
  CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("softmax rows gradient") {
  Rng rng(4);
  Var a = parameter(random_mat(rng, 3, 5), "a");
  Var w = constant(random_mat(rng, 3, 5));
  gradcheck({a}, [&] { return sum_all(cmul(softmax_rows(a), w)); });
}

TEST_CASE("masked softmax ignores masked columns exactly") {
  Rng rng(5);
  Mat mask = Mat::Zero(2, 4);
  mask(0, 2) = -1e30;
  mask(0, 3) = -1e30;
  Var a = parameter(random_mat(rng, 2, 4), "a");
  Var sm = softmax_rows(add(a, constant(mask)));
  CHECK(sm->value(0, 2) == 0.0);
  CHECK(sm->value(0, 3) == 0.0);
  CHECK(sm->value.row(0).sum() == doctest::Approx(1.0));
  Var w = constant(random_mat(rng, 2, 4));
  gradcheck({a}, [&] { return sum_all(cmul(softmax_rows(add(a, constant(mask))), w)); });
}

TEST_CASE("layer norm gradient") {
  Rng rng(6);
  Var x = parameter(random_mat(rng, 4, 6), "x");
  Var gamma = parameter(random_mat(rng, 1, 6), "gamma");
  Var beta = parameter(random_mat(rng, 1, 6), "beta");
  Var w = constant(random_mat(rng, 4, 6));
  gradcheck({x, gamma, beta}, [&] { return sum_all(cmul(layer_norm(x, gamma, beta), w)); },
            1e-5, 5e-6);
}

TEST_CASE("structure op gradients") {
  Rng rng(7);
  Var a = parameter(random_mat(rng, 5, 4), "a");
  Var w = constant(random_mat(rng, 2, 4));
  gradcheck({a}, [&] { return sum_all(cmul(slice_rows(a, 1, 2), w)); });
  gradcheck({a}, [&] {
    return sum_all(square(concat_cols({slice_cols(a, 0, 2), slice_cols(a, 2, 2)})));
  });
  gradcheck({a}, [&] { return sum_all(square(transpose(a))); });
  gradcheck({a}, [&] { return sum_all(square(gather_rows(a, {0, 2, 2, 4}))); });
  gradcheck({a}, [&] { return sum_all(square(concat_rows({slice_rows(a, 0, 2), slice_rows(a, 2, 3)}))); });
}

TEST_CASE("pooling op gradients and exactness on constant rows") {
  Rng rng(8);
  Var a = parameter(random_mat(rng, 6, 3), "a");
  gradcheck({a}, [&] { return sum_all(square(mean_rows(a))); });
  gradcheck({a}, [&] { return sum_all(square(maxpool_rows(a))); });

  Mat row = random_mat(rng, 1, 3);
  for (int n : {1, 2, 3, 7, 50}) {
    Mat repeated = row.replicate(n, 1);
    Var v = constant(repeated);
    CHECK(mean_rows(v)->value == row);
    CHECK(maxpool_rows(v)->value == row);
  }
}

TEST_CASE("scalar broadcast gradient") {
  Rng rng(9);
  Var a = parameter(random_mat(rng, 3, 3), "a");
  Var s = parameter(random_mat(rng, 1, 1), "s");
  gradcheck({a, s}, [&] { return sum_all(square(add_scalar_var(a, s))); });
}

TEST_CASE("gradients accumulate across two backward calls") {
  Var a = parameter(Mat::Ones(2, 2), "a");
  Var loss1 = sum_all(square(a));
  backward(loss1);
  const Mat once = a->grad;
  Var loss2 = sum_all(square(a));
  backward(loss2);
  CHECK(a->grad == (2.0 * once).eval());
  a->zero_grad();
  CHECK(a->grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shared subexpression receives gradient from every consumer") {
  Rng rng(10);
  Var a = parameter(random_mat(rng, 3, 3), "a");
  gradcheck({a}, [&] {
    Var h = sigmoid(a);
    return sum_all(add(cmul(h, h), scale(h, 0.5)));
  });
}

TEST_CASE("backward requires a scalar root") {
  Var a = parameter(Mat::Ones(2, 2), "a");
  CHECK_THROWS_AS(backward(square(a)), std::invalid_argument);
}
