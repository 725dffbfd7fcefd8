#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ppreg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Thrown when a numerical routine cannot produce a trustworthy answer.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A matrix counts as invertible when its 2-norm condition number is below this.
inline constexpr double kInvertibleCond = 1e12;

inline double condition_number(const Mat& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<Mat> svd(m);
  const auto& s = svd.singularValues();
  double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

inline bool is_invertible(const Mat& m) { return condition_number(m) < kInvertibleCond; }

inline Mat checked_inverse(const Mat& m, const char* what = "matrix") {
  double c = condition_number(m);
  if (!(c < kInvertibleCond))
    throw NumericalError(std::string(what) + " is singular (condition number " +
                         std::to_string(c) + ")");
  return m.fullPivLu().inverse();
}

// Scaling and squaring with the degree 13 diagonal Pade approximant (Higham 2005).
inline Mat expm(const Mat& a) {
  const long n = a.rows();
  if (n == 0) return a;
  static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;
  double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  if (!std::isfinite(norm1)) throw NumericalError("expm: non-finite input");
  int s = 0;
  if (norm1 > theta13) s = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
  Mat x = a / std::ldexp(1.0, s);
  Mat id = Mat::Identity(n, n);
  Mat x2 = x * x, x4 = x2 * x2, x6 = x4 * x2;
  Mat u = x * (x6 * (b[13] * x6 + b[11] * x4 + b[9] * x2) + b[7] * x6 + b[5] * x4 + b[3] * x2 +
               b[1] * id);
  Mat v = x6 * (b[12] * x6 + b[10] * x4 + b[8] * x2) + b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * id;
  Mat r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < s; ++i) r = r * r;
  return r;
}

// Symmetric square root and inverse square root of a positive semidefinite matrix.
inline Mat sym_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline Mat sym_inv_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  if (es.eigenvalues().minCoeff() <= 0.0) throw NumericalError("matrix is not positive definite");
  Vec ev = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double min_eigenvalue(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double frobenius_rel_gap(const Mat& a, const Mat& ref) {
  return (a - ref).norm() / ref.norm();
}

}  // namespace ppreg
