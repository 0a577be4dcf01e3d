#pragma once

#include "ecgr/data.hpp"
#include "ecgr/models.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ecgr {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  AdamConfig optimizer{};
  TrainableScope scope = TrainableScope::all;
  std::uint64_t seed = 0;
  int patience = 10;                  // early stopping on held-out accuracy; 0 disables
  double validation_fraction = 0.1;   // held out of the training set when patience > 0
};

struct TrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> validation_accuracy;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainEpoch> epochs;

  /// CSV with columns epoch,loss,train_acc,val_acc,seconds.
  [[nodiscard]] std::string csv() const;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Row-wise softmax of an (samples x classes) matrix.
template <typename Derived>
[[nodiscard]] typename Derived::PlainObject softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  typename Derived::PlainObject t = logits.transpose();
  return softmax_columns(t).transpose();
}

namespace detail {

template <typename D1, typename D2, typename D3>
void check_loss_inputs(const Eigen::MatrixBase<D1>& y_true, const Eigen::MatrixBase<D2>& y_pred,
                       const Eigen::MatrixBase<D3>& w) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols())
    throw ValidationError(fmt::format("weighted_cross_entropy: y_true is {}x{} but y_pred is {}x{}", y_true.rows(),
                                      y_true.cols(), y_pred.rows(), y_pred.cols()));
  if (w.size() != y_true.rows())
    throw ValidationError(fmt::format("weighted_cross_entropy: {} weights for {} samples", w.size(), y_true.rows()));
  if (y_true.rows() == 0) throw ValidationError("weighted_cross_entropy: empty batch");
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double wi = static_cast<double>(w(i));
    if (!(wi > 0.0 && wi <= 1.0))
      throw ValidationError(fmt::format("weighted_cross_entropy: weight {} of sample {} outside (0, 1]", wi, i));
  }
}

}  // namespace detail

/// Mean over the batch of L_i = -w_i * sum_j y_true_ij * log(y_pred_ij).
/// Rows are samples; y_pred rows must be probability vectors. Probabilities
/// are clamped at 1e-12 before the log.
template <typename D1, typename D2, typename D3>
[[nodiscard]] typename D2::Scalar weighted_cross_entropy(const Eigen::MatrixBase<D1>& y_true,
                                                         const Eigen::MatrixBase<D2>& y_pred,
                                                         const Eigen::MatrixBase<D3>& w) {
  using S = typename D2::Scalar;
  detail::check_loss_inputs(y_true, y_pred, w);
  for (Eigen::Index i = 0; i < y_pred.rows(); ++i) {
    const double sum = static_cast<double>(y_pred.row(i).sum());
    if (std::abs(sum - 1.0) > 1e-5 || (y_pred.row(i).array() < S(0)).any())
      throw ValidationError(fmt::format("weighted_cross_entropy: row {} of y_pred is not a probability vector", i));
  }
  const auto log_p = y_pred.derived().array().max(S(kProbabilityFloor)).log();
  const auto per_sample = -(y_true.derived().template cast<S>().array() * log_p).rowwise().sum();
  return (per_sample * w.derived().template cast<S>().array()).sum() / static_cast<S>(y_pred.rows());
}

/// Gradient of weighted_cross_entropy(y_true, softmax_rows(logits), w) with
/// respect to the logits: w_i * (p_ij * sum_k y_ik - y_ij) / N.
template <typename D1, typename D2, typename D3>
[[nodiscard]] typename D2::PlainObject weighted_cross_entropy_logit_grad(const Eigen::MatrixBase<D1>& y_true,
                                                                         const Eigen::MatrixBase<D2>& logits,
                                                                         const Eigen::MatrixBase<D3>& w) {
  using S = typename D2::Scalar;
  detail::check_loss_inputs(y_true, logits, w);
  const typename D2::PlainObject p = softmax_rows(logits);
  const auto yt = y_true.derived().template cast<S>();
  typename D2::PlainObject g = ((p.array().colwise() * yt.rowwise().sum().array()) - yt.array()).matrix();
  g.array().colwise() *= w.derived().template cast<S>().array();
  return g / static_cast<S>(logits.rows());
}

/// Maximum relative error between the analytic logit gradient and a central
/// finite-difference estimate with step h.
template <typename D1, typename D2, typename D3>
[[nodiscard]] double gradient_check_loss(const Eigen::MatrixBase<D1>& y_true, const Eigen::MatrixBase<D2>& logits,
                                         const Eigen::MatrixBase<D3>& w, double h = 1e-5) {
  const Eigen::MatrixXd yt = y_true.template cast<double>();
  const Eigen::MatrixXd z = logits.template cast<double>();
  const Eigen::VectorXd wd = w.template cast<double>();
  const Eigen::MatrixXd analytic = weighted_cross_entropy_logit_grad(yt, z, wd);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      Eigen::MatrixXd plus = z;
      Eigen::MatrixXd minus = z;
      plus(i, j) += h;
      minus(i, j) -= h;
      const double numeric =
          (weighted_cross_entropy(yt, softmax_rows(plus), wd) - weighted_cross_entropy(yt, softmax_rows(minus), wd)) /
          (2.0 * h);
      const double a = analytic(i, j);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

/// One-hot (samples x classes) matrix for integer labels.
[[nodiscard]] Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes);

/// Minimises weighted_cross_entropy over shuffled mini-batches. With the
/// fc_only scope every feature-extractor parameter and batch-norm statistic
/// is left untouched.
template <typename Scalar>
std::pair<BasicClassifier<Scalar>, TrainLog> train_classifier(BasicClassifier<Scalar> model, const Dataset& train_set,
                                                              const TrainConfig& cfg);

}  // namespace ecgr
