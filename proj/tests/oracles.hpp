#pragma once

// Reference computations written independently of the library, used as
// ground truth by the unit and acceptance tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

// -sum_j y_ij log p_ij averaged over rows, no weights, no clamping beyond 1e-12.
inline double cross_entropy(const Eigen::MatrixXd& y, const Eigen::MatrixXd& p) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j)
      if (y(i, j) != 0.0) total -= y(i, j) * std::log(std::max(p(i, j), 1e-12));
  return total / static_cast<double>(y.rows());
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) s += std::exp(z(i, j) - m);
    for (Eigen::Index j = 0; j < z.cols(); ++j) p(i, j) = std::exp(z(i, j) - m) / s;
  }
  return p;
}

// Central differences of a scalar function of a vector.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x;
    Eigen::VectorXd b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), floor});
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / d);
  }
  return worst;
}

struct MeanStd {
  double mean;
  double std;
};

// Two-pass population statistics in long double.
inline MeanStd population_stats(const std::vector<double>& v) {
  long double sum = 0.0L;
  for (double x : v) sum += x;
  const long double mean = sum / static_cast<long double>(v.size());
  long double sq = 0.0L;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {static_cast<double>(mean), static_cast<double>(std::sqrt(sq / static_cast<long double>(v.size())))};
}

// F1 of one class from scratch: count tp / fp / fn by scanning.
inline double f1_of(int c, const std::vector<int>& pred, const std::vector<int>& truth) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == c && truth[i] == c) ++tp;
    if (pred[i] == c && truth[i] != c) ++fp;
    if (pred[i] != c && truth[i] == c) ++fn;
  }
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / (tp + fp);
  const double r = static_cast<double>(tp) / (tp + fn);
  return 2 * p * r / (p + r);
}

// Per-sample QA rule: argmax (lowest index on ties) must equal the intended
// label and the intended-class probability must reach the threshold.
inline bool qa_rule(const std::vector<double>& probs, int intended, double threshold) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(probs.size()); ++c)
    if (probs[c] > probs[best]) best = c;
  return best == intended && probs[intended] >= threshold;
}

}  // namespace oracle
