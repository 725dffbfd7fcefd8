#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace ppreg {

struct GaussRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

// Gauss-Legendre nodes by Newton iteration on P_m.
inline GaussRule gauss_legendre(int m) {
  if (m < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
  GaussRule r;
  r.nodes.assign(m, 0.0);
  r.weights.assign(m, 0.0);
  int half = (m + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (m + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= m; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = m * (z * p1 - p2) / (z * z - 1.0);
      double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    // recompute derivative at the converged node
    double p1 = 1.0, p2 = 0.0;
    for (int j = 1; j <= m; ++j) {
      double p3 = p2;
      p2 = p1;
      p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
    }
    pp = m * (z * p1 - p2) / (z * z - 1.0);
    r.nodes[i] = -z;
    r.nodes[m - 1 - i] = z;
    double w = 2.0 / ((1.0 - z * z) * pp * pp);
    r.weights[i] = w;
    r.weights[m - 1 - i] = w;
  }
  if (m % 2 == 1) r.nodes[m / 2] = 0.0;
  return r;
}

// Gauss-Hermite rule for the weight exp(-z^2 / 2) on the real line (Golub-Welsch).
inline GaussRule gauss_hermite_prob(int m) {
  if (m < 1) throw std::invalid_argument("gauss_hermite_prob: need at least one node");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GaussRule r;
  r.nodes.resize(m);
  r.weights.resize(m);
  const double mass = std::sqrt(2.0 * std::numbers::pi);
  for (int i = 0; i < m; ++i) {
    r.nodes[i] = es.eigenvalues()[i];
    r.weights[i] = mass * es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
  // exact symmetry
  for (int i = 0; i < m / 2; ++i) {
    double z = 0.5 * (r.nodes[m - 1 - i] - r.nodes[i]), w = 0.5 * (r.weights[i] + r.weights[m - 1 - i]);
    r.nodes[i] = -z;
    r.nodes[m - 1 - i] = z;
    r.weights[i] = r.weights[m - 1 - i] = w;
  }
  if (m % 2 == 1) r.nodes[m / 2] = 0.0;
  return r;
}

// Weights for integrating samples on a uniform grid of `count` points with step h.
// Composite Simpson; an odd number of intervals closes with a 3/8 panel.
inline std::vector<double> simpson_weights(std::size_t count, double h) {
  std::vector<double> w(count, 0.0);
  if (count < 2) return w;
  std::size_t intervals = count - 1;
  if (intervals == 1) {
    w[0] = w[1] = 0.5 * h;
    return w;
  }
  std::size_t simpson_end = intervals;
  if (intervals % 2 == 1) simpson_end = intervals - 3;
  for (std::size_t i = 0; i + 2 <= simpson_end; i += 2) {
    w[i] += h / 3.0;
    w[i + 1] += 4.0 * h / 3.0;
    w[i + 2] += h / 3.0;
  }
  if (intervals % 2 == 1) {
    std::size_t k = simpson_end;
    w[k] += 3.0 * h / 8.0;
    w[k + 1] += 9.0 * h / 8.0;
    w[k + 2] += 9.0 * h / 8.0;
    w[k + 3] += 3.0 * h / 8.0;
  }
  return w;
}

template <class F>
double gauss_integrate(const GaussRule& rule, double a, double b, F&& f) {
  double c = 0.5 * (a + b), r = 0.5 * (b - a), s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * f(c + r * rule.nodes[i]);
  return s * r;
}

}  // namespace ppreg
