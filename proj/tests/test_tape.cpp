#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "quadleague/rng.hpp"
#include "quadleague/tape.hpp"

using namespace quadleague;
using nn::Mat;
using nn::Tape;
using nn::Tensor;

namespace {

Mat<double> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Central finite differences against the tape gradient for every element of
// every parameter. `forward` records the graph and (when asked) runs the
// backward pass; it returns the scalar loss.
void check_gradients(std::vector<Tensor<double>*> params,
                     const std::function<double(Tape<double>&, bool)>& forward,
                     double tol = 1e-6, double h = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    forward(tape, true);
  }
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      Tape<double> tp;
      const double fp = forward(tp, false);
      p->value.data()[i] = saved - h;
      Tape<double> tm;
      const double fm = forward(tm, false);
      p->value.data()[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = p->grad.data()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      EXPECT_LT(std::abs(fd - an) / denom, tol)
          << p->name << "[" << i << "]: fd=" << fd << " analytic=" << an;
    }
  }
}

}  // namespace

TEST(Tape, MatmulChainGradients) {
  Rng rng(1);
  Tensor<double> w1("w1", 4, 3), w2("w2", 2, 4), b("b", 1, 4);
  w1.value = random_mat(4, 3, rng);
  w2.value = random_mat(2, 4, rng);
  b.value = random_mat(1, 4, rng);
  const Mat<double> x = random_mat(5, 3, rng);

  auto forward = [&](Tape<double>& t, bool backward) {
    auto xr = t.constant(x);
    auto h1 = t.add_rowvec(t.matmul_nt(xr, t.parameter(&w1)), t.parameter(&b));
    auto h2 = t.tanh(h1);
    auto y = t.matmul_nt(h2, t.parameter(&w2));
    auto loss = t.sum_all(t.square(y));
    if (backward) t.backward(loss);
    return t.scalar(loss);
  };
  check_gradients({&w1, &w2, &b}, forward);
}

TEST(Tape, PlainMatmulGradients) {
  Rng rng(11);
  Tensor<double> a("a", 3, 4), b("b", 4, 2);
  a.value = random_mat(3, 4, rng);
  b.value = random_mat(4, 2, rng);
  auto forward = [&](Tape<double>& t, bool backward) {
    auto y = t.matmul(t.parameter(&a), t.parameter(&b));
    auto loss = t.sum_all(t.square(y));
    if (backward) t.backward(loss);
    return t.scalar(loss);
  };
  check_gradients({&a, &b}, forward);
}

TEST(Tape, ElementwiseOpsGradients) {
  Rng rng(2);
  Tensor<double> a("a", 3, 4), c("c", 3, 1), r("r", 1, 4);
  a.value = random_mat(3, 4, rng, 0.5);
  c.value = random_mat(3, 1, rng, 0.5);
  r.value = random_mat(1, 4, rng, 0.5);

  auto forward = [&](Tape<double>& t, bool backward) {
    auto an = t.parameter(&a);
    auto s = t.sigmoid(an);
    auto lr = t.leaky_relu(t.scale(an, 1.3), 0.01);
    auto e = t.exp(t.mul_colvec(s, t.parameter(&c)));
    auto m = t.mul_rowvec(t.mul(e, lr), t.parameter(&r));
    auto q = t.square(t.sub(m, s));
    auto loss = t.sum_all(q);
    if (backward) t.backward(loss);
    return t.scalar(loss);
  };
  check_gradients({&a, &c, &r}, forward, 2e-6);
}

TEST(Tape, StructuralOpsGradients) {
  Rng rng(3);
  Tensor<double> a("a", 4, 3), b("b", 4, 2), s("s", 1, 1);
  a.value = random_mat(4, 3, rng);
  b.value = random_mat(4, 2, rng);
  s.value = random_mat(1, 1, rng);

  auto forward = [&](Tape<double>& t, bool backward) {
    auto cat = t.concat_cols(t.parameter(&a), t.parameter(&b));  // 4x5
    auto top = t.slice_rows(cat, 0, 2);
    auto bottom = t.slice_rows(cat, 2, 2);
    auto joined = t.concat_rows({top, bottom, top});  // 6x5
    auto left = t.slice_cols(joined, 0, 3);
    auto rs = t.rowsum(t.tanh(left));
    auto shifted = t.add_scalar_node(rs, t.parameter(&s));
    auto loss = t.sum_all(t.square(shifted));
    if (backward) t.backward(loss);
    return t.scalar(loss);
  };
  check_gradients({&a, &b, &s}, forward);
}

TEST(Tape, BroadcastAndClampGradients) {
  Rng rng(4);
  Tensor<double> row("row", 1, 5), a("a", 6, 5);
  row.value = random_mat(1, 5, rng, 0.4);
  a.value = random_mat(6, 5, rng, 0.4);

  auto forward = [&](Tape<double>& t, bool backward) {
    auto br = t.broadcast_rows(t.parameter(&row), 6);
    auto cl = t.clamp(t.add(br, t.parameter(&a)), -0.5, 0.5);
    auto mn = t.cwise_min(cl, t.scale(t.parameter(&a), 0.7));
    auto loss = t.sum_all(t.mul(mn, mn));
    if (backward) t.backward(loss);
    return t.scalar(loss);
  };
  check_gradients({&row, &a}, forward, 2e-5);  // kinks cost some FD accuracy
}

TEST(Tape, SoftmaxGroupsGradients) {
  Rng rng(5);
  const int groups = 3, slots = 4, latents = 2;
  Tensor<double> scores("scores", groups * slots, latents);
  scores.value = random_mat(groups * slots, latents, rng);
  Mat<double> mask = Mat<double>::Ones(groups * slots, 1);
  mask(1, 0) = 0.0;  // masked slots
  mask(7, 0) = 0.0;
  const Mat<double> weights = random_mat(groups * slots, latents, rng);

  auto forward = [&](Tape<double>& t, bool backward) {
    auto p = t.softmax_groups(t.parameter(&scores), slots, t.constant(mask));
    auto loss = t.sum_all(t.mul(p, t.constant(weights)));
    if (backward) t.backward(loss);
    return t.scalar(loss);
  };
  check_gradients({&scores}, forward);

  // probabilities sum to one per (group, column) over unmasked slots
  Tape<double> t;
  auto p = t.softmax_groups(t.parameter(&scores), slots, t.constant(mask));
  for (int g = 0; g < groups; ++g)
    for (int l = 0; l < latents; ++l) {
      double sum = 0.0;
      for (int i = 0; i < slots; ++i) sum += t.val(p)(g * slots + i, l);
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  EXPECT_DOUBLE_EQ(t.val(p)(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(t.val(p)(7, 1), 0.0);
}

TEST(Tape, AttentionMixAndFlattenGradients) {
  Rng rng(6);
  const int groups = 3, slots = 4, latents = 2, dim = 5;
  Tensor<double> p("p", groups * slots, latents), v("v", groups * slots, dim);
  p.value = random_mat(groups * slots, latents, rng);
  v.value = random_mat(groups * slots, dim, rng);
  const Mat<double> w = random_mat(groups, latents * dim, rng);

  auto forward = [&](Tape<double>& t, bool backward) {
    auto mixed = t.attn_mix(t.parameter(&p), t.parameter(&v), slots);  // (groups*latents) x dim
    auto flat = t.group_flatten(mixed, latents);                       // groups x (latents*dim)
    auto loss = t.sum_all(t.mul(flat, t.constant(w)));
    if (backward) t.backward(loss);
    return t.scalar(loss);
  };
  check_gradients({&p, &v}, forward);

  // value check of the mix against a hand loop
  Tape<double> t;
  auto mixed = t.attn_mix(t.constant(p.value), t.constant(v.value), slots);
  for (int g = 0; g < groups; ++g)
    for (int l = 0; l < latents; ++l)
      for (int d = 0; d < dim; ++d) {
        double acc = 0.0;
        for (int i = 0; i < slots; ++i)
          acc += p.value(g * slots + i, l) * v.value(g * slots + i, d);
        EXPECT_NEAR(t.val(mixed)(g * latents + l, d), acc, 1e-12);
      }
}

TEST(Tape, ZeroLossGivesZeroGradients) {
  Tensor<double> w("w", 3, 3);
  Rng rng(7);
  w.value = random_mat(3, 3, rng);
  w.zero_grad();
  Tape<double> t;
  auto loss = t.scale(t.sum_all(t.parameter(&w)), 0.0);
  t.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Tape, DoubleBackwardRejected) {
  Tensor<double> w("w", 2, 2);
  w.value.setOnes();
  Tape<double> t;
  auto loss = t.sum_all(t.parameter(&w));
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), std::runtime_error);
}

TEST(Tape, StaleTapeRejected) {
  Tensor<double> w("w", 2, 2);
  w.value.setOnes();
  Tape<double> t(/*param_generation=*/3);
  auto loss = t.sum_all(t.parameter(&w));
  EXPECT_THROW(t.backward(loss, /*current_generation=*/4), std::runtime_error);
  EXPECT_NO_THROW(t.clear());
}

TEST(Tape, BackwardNeedsScalarLoss) {
  Tensor<double> w("w", 2, 3);
  w.value.setOnes();
  Tape<double> t;
  auto node = t.parameter(&w);
  EXPECT_THROW(t.backward(node), std::invalid_argument);
}

TEST(Tape, GradientAccumulatesIntoTensors) {
  Tensor<double> w("w", 2, 2);
  w.value.setConstant(2.0);
  w.zero_grad();
  {
    Tape<double> t;
    t.backward(t.sum_all(t.square(t.parameter(&w))));
  }
  {
    Tape<double> t;
    t.backward(t.sum_all(t.square(t.parameter(&w))));
  }
  // two backward passes accumulate: d/dw sum(w^2) = 2w = 4, twice = 8
  EXPECT_DOUBLE_EQ(w.grad(0, 0), 8.0);
}
