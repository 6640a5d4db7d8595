#ifndef SCMT_TESTS_FD_CHECK_HPP_
#define SCMT_TESTS_FD_CHECK_HPP_

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scmt/autodiff.hpp"
#include "scmt/rng.hpp"
#include "scmt/tensor.hpp"

namespace fd {

// Builds the expression under test from the given leaf vars; the checker owns
// the tape, the leaves, and the scalar reduction.
using Builder =
    std::function<scmt::Var(scmt::Tape<double>&, const std::vector<scmt::Var>&)>;

inline scmt::Tensor<double> random_tensor(std::vector<int64_t> shape, uint64_t seed,
                                          double scale = 1.0) {
  scmt::Rng rng(seed);
  scmt::Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Verifies reverse-mode input gradients of mse(build(inputs), fixed random
// target) against central differences, element by element. One fixed target
// breaks output symmetries, so transposed or mis-indexed gradients cannot
// cancel out in the reduction.
inline void check_gradients(const std::string& label, const Builder& build,
                            std::vector<scmt::Tensor<double>> inputs,
                            double h = 1e-5) {
  scmt::Tensor<double> target;
  std::vector<scmt::Tensor<double>> analytic(inputs.size());
  {
    scmt::Tape<double> tape(true);
    std::vector<scmt::Var> vars;
    vars.reserve(inputs.size());
    for (auto& in : inputs) vars.push_back(tape.leaf(in, true));
    scmt::Var out = build(tape, vars);
    target = random_tensor(tape.value(out).shape(), 1234567);
    scmt::Var loss = scmt::ad::mse_mean(tape, out, target);
    tape.backward(loss);
    for (size_t i = 0; i < vars.size(); ++i)
      analytic[i] = tape.grad_allocated(vars[i])
                        ? tape.grad(vars[i])
                        : scmt::Tensor<double>(inputs[i].shape());
  }

  auto eval = [&](const std::vector<scmt::Tensor<double>>& xs) {
    scmt::Tape<double> tape(false);
    std::vector<scmt::Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
    scmt::Var out = build(tape, vars);
    scmt::Var loss = scmt::ad::mse_mean(tape, out, target);
    return tape.scalar(loss);
  };

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      const double keep = inputs[i][j];
      inputs[i][j] = keep + h;
      const double up = eval(inputs);
      inputs[i][j] = keep - h;
      const double down = eval(inputs);
      inputs[i][j] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double tol = 1e-6 + 1e-4 * (std::abs(a) + std::abs(numeric));
      ASSERT_NEAR(a, numeric, tol) << label << ": input " << i << " element " << j;
    }
  }
}

}  // namespace fd

#endif  // SCMT_TESTS_FD_CHECK_HPP_
