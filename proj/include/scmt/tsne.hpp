#ifndef SCMT_TSNE_HPP_
#define SCMT_TSNE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include "scmt/common.hpp"
#include "scmt/rng.hpp"

namespace scmt {

struct TsneOptions {
  double perplexity = 30.0;
  int max_iter = 500;
  int exaggeration_iters = 100;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iter = 250;
  uint64_t seed = 0;
};

// Exact (all-pairs) t-SNE to two dimensions: per-point Gaussian bandwidths
// found by binary search on the entropy target, symmetrized affinities,
// Student-t low-dimensional kernel, and momentum gradient descent with the
// standard gain heuristic and an early-exaggeration phase. Deterministic
// given the seed; quadratic cost, meant for a few hundred points.
inline std::vector<std::array<double, 2>> project_2d(
    const std::vector<std::vector<double>>& points, const TsneOptions& opt = {}) {
  const size_t n = points.size();
  SCMT_REQUIRE(n >= 5, "project_2d: need at least 5 points");
  const double max_perplexity = static_cast<double>(n) / 3.0;
  if (!(opt.perplexity > 0.0) || opt.perplexity >= max_perplexity) {
    std::ostringstream msg;
    msg << "project_2d: perplexity " << opt.perplexity << " infeasible for " << n
        << " points; it must be positive and below n/3 = " << max_perplexity;
    throw InvalidInputError(msg.str());
  }
  const size_t dim = points[0].size();
  for (const auto& p : points)
    SCMT_REQUIRE(p.size() == dim, "project_2d: ragged point dimensions");

  // Pairwise squared distances.
  std::vector<double> d2(n * n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (size_t f = 0; f < dim; ++f) {
        double d = points[i][f] - points[j][f];
        acc += d * d;
      }
      d2[i * n + j] = acc;
      d2[j * n + i] = acc;
    }

  // Conditional affinities p_{j|i} with per-point precision beta found by
  // binary search so that the entropy matches log(perplexity).
  const double target_entropy = std::log(opt.perplexity);
  std::vector<double> p(n * n, 0.0);
  std::vector<double> row(n);
  for (size_t i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 64; ++iter) {
      double sum = 0.0, weighted = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        row[j] = std::exp(-beta * d2[i * n + j]);
        sum += row[j];
        weighted += row[j] * d2[i * n + j];
      }
      // H = log(sum) + beta * E[d2]; all in nats.
      double entropy = sum > 0.0 ? std::log(sum) + beta * weighted / sum : 0.0;
      double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-7) break;
      if (diff > 0.0) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = beta_lo > 0.0 ? 0.5 * (beta + beta_lo) : beta * 0.5;
      }
    }
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) sum += row[j];
    SCMT_REQUIRE(sum > 0.0, "project_2d: degenerate affinity row");
    for (size_t j = 0; j < n; ++j) p[i * n + j] = row[j] / sum;
  }

  // Symmetrize and floor.
  std::vector<double> pij(n * n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      pij[i * n + j] =
          std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)),
                   1e-12);

  // Small seeded Gaussian start.
  Rng rng(opt.seed);
  std::vector<std::array<double, 2>> y(n), dy(n, {0.0, 0.0}), step(n, {0.0, 0.0});
  std::vector<std::array<double, 2>> gains(n, {1.0, 1.0});
  for (size_t i = 0; i < n; ++i) y[i] = {rng.normal(0.0, 1e-4), rng.normal(0.0, 1e-4)};

  std::vector<double> qnum(n * n, 0.0);
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    const double ex = iter < opt.exaggeration_iters ? opt.exaggeration : 1.0;
    const double momentum =
        iter < opt.momentum_switch_iter ? opt.initial_momentum : opt.final_momentum;

    double qsum = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        double dx = y[i][0] - y[j][0], dz = y[i][1] - y[j][1];
        double q = 1.0 / (1.0 + dx * dx + dz * dz);
        qnum[i * n + j] = q;
        qnum[j * n + i] = q;
        qsum += 2.0 * q;
      }
    qsum = std::max(qsum, 1e-12);

    for (size_t i = 0; i < n; ++i) {
      double gx = 0.0, gz = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double q = qnum[i * n + j];
        double coeff = (ex * pij[i * n + j] - q / qsum) * q;
        gx += coeff * (y[i][0] - y[j][0]);
        gz += coeff * (y[i][1] - y[j][1]);
      }
      dy[i] = {4.0 * gx, 4.0 * gz};
    }

    for (size_t i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        // Gain heuristic: grow when gradient and velocity disagree in sign.
        bool same_sign = (dy[i][c] > 0.0) == (step[i][c] > 0.0);
        gains[i][c] = std::max(same_sign ? gains[i][c] * 0.8 : gains[i][c] + 0.2, 0.01);
        step[i][c] = momentum * step[i][c] - opt.learning_rate * gains[i][c] * dy[i][c];
        y[i][c] += step[i][c];
      }

    // Keep the embedding centered so drift never accumulates.
    double mx = 0.0, mz = 0.0;
    for (const auto& pt : y) {
      mx += pt[0];
      mz += pt[1];
    }
    mx /= static_cast<double>(n);
    mz /= static_cast<double>(n);
    for (auto& pt : y) {
      pt[0] -= mx;
      pt[1] -= mz;
    }
  }
  return y;
}

}  // namespace scmt

#endif  // SCMT_TSNE_HPP_
