// Shared finite-difference harness for tape-based gradient tests.
#pragma once

#include <gtest/gtest.h>

#include <functional>
#include <string>
#include <vector>

#include "sesrec/autodiff.hpp"

namespace sesrec::ad {

inline Mat<double> random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Mat<double> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

// Random projection to a scalar so output gradients are non-uniform.
inline Var to_scalar(Tape<double>& tape, Var x, uint64_t salt = 1) {
  Rng rng = make_rng(777, salt);
  Mat<double> r = random_matrix(static_cast<int>(tape.val(x).rows()),
                                static_cast<int>(tape.val(x).cols()), rng);
  return tape.sum_all(tape.hadamard(x, tape.value(std::move(r))));
}

// Checks analytic gradients of a scalar-valued graph against central finite
// differences for every entry of every input matrix.
inline void check_gradients(std::vector<Mat<double>> inputs,
                            std::function<Var(Tape<double>&, const std::vector<Var>&)> build,
                            double tol = 1e-7, double h = 1e-6) {
  ParamStore<double> store;
  std::vector<Param<double>*> params;
  for (size_t i = 0; i < inputs.size(); ++i)
    params.push_back(&store.add("p" + std::to_string(i), inputs[i]));

  auto forward = [&]() {
    Tape<double> tape(/*grad_enabled=*/false);
    std::vector<Var> leaves;
    for (auto* p : params) leaves.push_back(tape.value(p->value));
    Var out = build(tape, leaves);
    return tape.val(out)(0, 0);
  };

  store.zero_grads();
  {
    Tape<double> tape;
    std::vector<Var> leaves;
    for (auto* p : params) leaves.push_back(tape.param(*p));
    Var out = build(tape, leaves);
    tape.backward(out);
  }

  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      double up = forward();
      p->value.data()[i] = saved - h;
      double down = forward();
      p->value.data()[i] = saved;
      double fd = (up - down) / (2 * h);
      double an = p->grad.data()[i];
      ASSERT_NEAR(an, fd, tol * std::max({1.0, std::abs(fd), std::abs(an)}))
          << p->name << " entry " << i;
    }
  }
}

}  // namespace sesrec::ad
