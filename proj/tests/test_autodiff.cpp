#include "sesrec/autodiff.hpp"

#include <gtest/gtest.h>

#include "tape_test_util.hpp"

namespace sesrec::ad {
namespace {

using M = Mat<double>;

TEST(TapeOps, MatmulForwardAndGrad) {
  Rng rng = make_rng(1);
  M a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng);
  {
    Tape<double> tape;
    Var c = tape.matmul(tape.value(a), tape.value(b));
    M expect = a * b;
    EXPECT_LT((tape.val(c) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
  check_gradients({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
    return to_scalar(t, t.matmul(v[0], v[1]));
  });
}

TEST(TapeOps, MatmulShapeMismatchThrows) {
  Tape<double> tape;
  Var a = tape.value(M::Zero(2, 3));
  Var b = tape.value(M::Zero(2, 3));
  EXPECT_THROW(tape.matmul(a, b), ShapeError);
}

TEST(TapeOps, TransposeAddSubHadamard) {
  Rng rng = make_rng(2);
  M a = random_matrix(3, 5, rng), b = random_matrix(3, 5, rng);
  check_gradients({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
    Var x = t.add(v[0], v[1]);
    Var y = t.sub(v[0], t.transpose(t.transpose(v[1])));
    return to_scalar(t, t.hadamard(x, y));
  });
}

TEST(TapeOps, AffineAndRowBroadcast) {
  Rng rng = make_rng(3);
  M a = random_matrix(4, 3, rng), bias = random_matrix(1, 3, rng);
  check_gradients({a, bias}, [](Tape<double>& t, const std::vector<Var>& v) {
    return to_scalar(t, t.add_row_broadcast(t.affine(v[0], 1.7, -0.3), v[1]));
  });
}

TEST(TapeOps, ScalarNodeMulDiv) {
  Rng rng = make_rng(4);
  M a = random_matrix(3, 3, rng);
  M s(1, 1);
  s(0, 0) = 0.37;
  check_gradients({a, s}, [](Tape<double>& t, const std::vector<Var>& v) {
    Var x = t.mul_by_scalar_node(v[0], v[1]);
    Var y = t.div_by_scalar_node(x, v[1]);
    return to_scalar(t, t.add(x, y));
  });
}

TEST(TapeOps, ElementwiseNonlinearities) {
  Rng rng = make_rng(5);
  M a = random_matrix(3, 4, rng, 0.8);
  check_gradients({a}, [](Tape<double>& t, const std::vector<Var>& v) {
    Var x = t.tanh_(v[0]);
    Var y = t.sigmoid(v[0]);
    return t.add(to_scalar(t, x, 1), to_scalar(t, y, 2));
  });
}

TEST(TapeOps, ReluGradAwayFromKink) {
  Rng rng = make_rng(6);
  M a = random_matrix(3, 4, rng);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::abs(a.data()[i]) < 0.05) a.data()[i] = 0.1;  // keep clear of the kink
  check_gradients({a}, [](Tape<double>& t, const std::vector<Var>& v) {
    return to_scalar(t, t.relu(v[0]));
  });
}

TEST(TapeOps, LogSqrtOnPositiveInputs) {
  Rng rng = make_rng(7);
  M a = random_matrix(3, 3, rng).array().abs().matrix() + M::Constant(3, 3, 0.5);
  check_gradients({a}, [](Tape<double>& t, const std::vector<Var>& v) {
    return t.add(to_scalar(t, t.log_(v[0]), 1), to_scalar(t, t.sqrt_(v[0]), 2));
  });
}

TEST(TapeOps, ClampPassesInsideBlocksOutside) {
  M a(1, 3);
  a << 0.5, 2.0, -2.0;
  Tape<double> tape;
  ParamStore<double> store;
  auto& p = store.add("a", a);
  Var x = tape.param(p);
  Var y = tape.clamp(x, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(tape.val(y)(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(tape.val(y)(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(tape.val(y)(0, 2), 0.0);
  tape.backward(tape.sum_all(y));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.grad(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(p.grad(0, 2), 0.0);
}

TEST(TapeOps, Reductions) {
  Rng rng = make_rng(8);
  M a = random_matrix(4, 3, rng);
  check_gradients({a}, [](Tape<double>& t, const std::vector<Var>& v) {
    Var s1 = t.sum_all(v[0]);
    Var s2 = t.mean_all(v[0]);
    Var s3 = to_scalar(t, t.row_sum(v[0]), 3);
    return t.add(s1, t.add(s2, s3));
  });
}

TEST(TapeOps, RowLogsumexpMatchesDirectComputation) {
  Rng rng = make_rng(9);
  M a = random_matrix(3, 5, rng, 2.0);
  Tape<double> tape;
  Var l = tape.row_logsumexp(tape.value(a));
  for (int i = 0; i < 3; ++i) {
    double direct = std::log(a.row(i).array().exp().sum());
    EXPECT_NEAR(tape.val(l)(i, 0), direct, 1e-12);
  }
  check_gradients({a}, [](Tape<double>& t, const std::vector<Var>& v) {
    return to_scalar(t, t.row_logsumexp(v[0]));
  });
}

TEST(TapeOps, MaskedSoftmaxValuesAndGrad) {
  Rng rng = make_rng(10);
  M a = random_matrix(3, 5, rng);
  std::vector<uint8_t> mask = {1, 0, 1, 1, 0};
  Tape<double> tape;
  Var y = tape.row_softmax_masked(tape.value(a), mask);
  for (int i = 0; i < 3; ++i) {
    double sum = 0;
    for (int j = 0; j < 5; ++j) {
      if (!mask[j]) EXPECT_DOUBLE_EQ(tape.val(y)(i, j), 0.0);
      sum += tape.val(y)(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  check_gradients({a}, [&mask](Tape<double>& t, const std::vector<Var>& v) {
    return to_scalar(t, t.row_softmax_masked(v[0], mask));
  });
}

TEST(TapeOps, FullyMaskedRowYieldsZeros) {
  M a = M::Ones(2, 3);
  std::vector<uint8_t> mask = {0, 0, 0};
  Tape<double> tape;
  Var y = tape.row_softmax_masked(tape.value(a), mask);
  EXPECT_DOUBLE_EQ(tape.val(y).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TapeOps, LayerNormValuesAndGrad) {
  Rng rng = make_rng(11);
  M x = random_matrix(4, 6, rng), gamma = random_matrix(1, 6, rng), beta = random_matrix(1, 6, rng);
  {
    Tape<double> tape;
    Var y = tape.row_layer_norm(tape.value(x), tape.value(gamma), tape.value(beta), 1e-5);
    for (int i = 0; i < 4; ++i) {
      double mu = x.row(i).mean();
      double var = (x.row(i).array() - mu).square().sum() / 6.0;
      for (int j = 0; j < 6; ++j) {
        double expect = (x(i, j) - mu) / std::sqrt(var + 1e-5) * gamma(0, j) + beta(0, j);
        EXPECT_NEAR(tape.val(y)(i, j), expect, 1e-12);
      }
    }
  }
  check_gradients({x, gamma, beta}, [](Tape<double>& t, const std::vector<Var>& v) {
    return to_scalar(t, t.row_layer_norm(v[0], v[1], v[2], 1e-5));
  }, 1e-6);
}

TEST(TapeOps, SelectRowsWithRepetition) {
  Rng rng = make_rng(12);
  M a = random_matrix(4, 3, rng);
  std::vector<int> rows = {2, 0, 2, 3};
  check_gradients({a}, [&rows](Tape<double>& t, const std::vector<Var>& v) {
    return to_scalar(t, t.select_rows(v[0], rows));
  });
}

TEST(TapeOps, ConcatColsAndRows) {
  Rng rng = make_rng(13);
  M a = random_matrix(2, 3, rng), b = random_matrix(2, 2, rng), c = random_matrix(3, 3, rng);
  check_gradients({a, b, c}, [](Tape<double>& t, const std::vector<Var>& v) {
    Var cc = t.concat_cols({v[0], v[1]});          // 2 x 5
    Var rr = t.concat_rows({v[0], v[2]});          // 5 x 3
    return t.add(to_scalar(t, cc, 1), to_scalar(t, rr, 2));
  });
}

TEST(TapeOps, GatherScattersIntoTableGrad) {
  Rng rng = make_rng(14);
  M table = random_matrix(5, 3, rng);
  ParamStore<double> store;
  auto& p = store.add("table", table, /*is_table=*/true);
  Tape<double> tape;
  Var g = tape.gather(p, {1, 3, 1});
  EXPECT_EQ(tape.val(g).rows(), 3);
  tape.backward(tape.sum_all(g));
  // Row 1 selected twice, row 3 once, others untouched.
  EXPECT_DOUBLE_EQ(p.grad(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(p.grad(3, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 0.0);
  ASSERT_EQ(tape.touched_rows().size(), 1u);
  EXPECT_EQ(tape.touched_rows()[0].second, (std::vector<int>{1, 3, 1}));
}

TEST(TapeOps, GatherOutOfRangeThrows) {
  ParamStore<double> store;
  auto& p = store.add("table", M::Zero(3, 2), true);
  Tape<double> tape;
  EXPECT_THROW(tape.gather(p, {3}), DataError);
}

TEST(TapeOps, ParamAccumulatesAcrossUses) {
  M w(1, 1);
  w(0, 0) = 2.0;
  ParamStore<double> store;
  auto& p = store.add("w", w);
  Tape<double> tape;
  Var x = tape.param(p);
  Var y = tape.hadamard(x, x);  // w^2, dy/dw = 2w = 4
  tape.backward(tape.sum_all(y));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 4.0);
}

TEST(TapeOps, CompositeChainMatchesFiniteDifferences) {
  Rng rng = make_rng(15);
  M x = random_matrix(3, 4, rng, 0.5);
  M w1 = random_matrix(4, 6, rng, 0.5);
  M b1 = random_matrix(1, 6, rng, 0.5);
  M w2 = random_matrix(6, 1, rng, 0.5);
  check_gradients({x, w1, b1, w2}, [](Tape<double>& t, const std::vector<Var>& v) {
    Var h = t.tanh_(t.add_row_broadcast(t.matmul(v[0], v[1]), v[2]));
    Var out = t.sigmoid(t.matmul(h, v[3]));
    return t.mean_all(t.log_(out));
  }, 1e-6);
}

TEST(TapeOps, NoGradTapeSkipsBackwardBookkeeping) {
  Tape<double> tape(/*grad_enabled=*/false);
  Var a = tape.value(M::Ones(2, 2));
  Var b = tape.matmul(a, a);
  EXPECT_EQ(tape.val(b)(0, 0), 2.0);
  EXPECT_THROW(tape.backward(tape.sum_all(b)), ShapeError);
}

}  // namespace
}  // namespace sesrec::ad
