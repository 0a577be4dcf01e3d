#pragma once

#include "ecgr/data.hpp"
#include "ecgr/models.hpp"
#include "ecgr/training.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ecgr {

struct GanConfig {
  double lambda_gp = 10.0;
  int n_critic = 5;
  int batch_size = 32;
  int epochs = 50;
  AdamConfig optimizer{1e-4, 0.5, 0.9};
  int noise_dim = 128;
  std::uint64_t seed = 0;
  GeneratorArch generator{};
  CriticArch critic{};

  /// Throws ValidationError when an invariant is violated.
  void validate() const;
};

struct GanTrainLog {
  enum class Kind { critic, generator };
  struct Entry {
    long step = 0;
    Kind kind = Kind::critic;
    double loss = 0.0;
    double gp = 0.0;  // zero for generator steps
    double seconds = 0.0;
  };
  std::vector<Entry> entries;

  [[nodiscard]] long count(Kind kind) const;
  /// CSV with columns step,kind,loss,gp,seconds.
  [[nodiscard]] std::string csv() const;
};

/// mean(fake_scores) - mean(real_scores) + lambda_gp * gp.
template <typename D1, typename D2>
[[nodiscard]] double critic_loss(const Eigen::MatrixBase<D1>& real_scores, const Eigen::MatrixBase<D2>& fake_scores,
                                 double gp, double lambda_gp) {
  if (real_scores.size() == 0 || fake_scores.size() == 0) throw ValidationError("critic_loss: empty score batch");
  if (!real_scores.allFinite() || !fake_scores.allFinite() || !std::isfinite(gp))
    throw DivergenceError("critic_loss: non-finite input");
  return static_cast<double>(fake_scores.template cast<double>().mean()) -
         static_cast<double>(real_scores.template cast<double>().mean()) + lambda_gp * gp;
}

/// -mean(fake_scores).
template <typename D>
[[nodiscard]] double generator_loss(const Eigen::MatrixBase<D>& fake_scores) {
  if (fake_scores.size() == 0) throw ValidationError("generator_loss: empty score batch");
  if (!fake_scores.allFinite()) throw DivergenceError("generator_loss: non-finite input");
  return -static_cast<double>(fake_scores.template cast<double>().mean());
}

/// x_hat = eps * real + (1 - eps) * fake with one eps ~ U[0, 1] per sample.
template <typename Scalar>
[[nodiscard]] nn::Matrix<Scalar> interpolate(const nn::Matrix<Scalar>& real, const nn::Matrix<Scalar>& fake,
                                             nn::Rng& rng);

/// Mean over the batch of (||grad_x critic(x_hat)||_2 - 1)^2 on fresh
/// interpolates drawn from `seed`. Evaluated in inference mode; the critic
/// is not modified.
template <typename Scalar>
[[nodiscard]] Scalar gradient_penalty(const BasicCritic<Scalar>& critic, const nn::Matrix<Scalar>& real,
                                      const nn::Matrix<Scalar>& fake, std::uint64_t seed);

/// Penalty at the given interpolates. Adds lambda * d(penalty)/d(theta) to
/// the critic's parameter gradients. Exact for piecewise-linear critics
/// (dense, conv, leaky ReLU, dropout, pooling), whose input gradient has no
/// curvature through the activations.
template <typename Scalar>
Scalar accumulate_gradient_penalty(nn::Sequential<Scalar>& critic, const nn::Matrix<Scalar>& interpolates,
                                   Scalar lambda, nn::Mode mode, nn::Rng& rng);

/// The alternating WGAN-GP loop over arbitrary networks. `real` holds one
/// sample per column in generator range. Per real batch: n_critic critic
/// updates (each with fresh noise and a fresh interpolation), then one
/// generator update.
template <typename Scalar>
GanTrainLog train_wgangp(nn::Sequential<Scalar>& generator, nn::Sequential<Scalar>& critic, int noise_dim,
                         const nn::Matrix<Scalar>& real, const GanConfig& cfg);

/// Trains one generator on images of a single class.
template <typename Scalar = float>
std::pair<BasicGenerator<Scalar>, GanTrainLog> train_wgangp_for_class(const std::vector<LabeledImage>& class_samples,
                                                                      const GanConfig& cfg);

/// n images labelled with the generator's class, in [0, 1].
[[nodiscard]] std::vector<LabeledImage> generate_samples(const ImageGenerator& gen, int n, std::uint64_t seed);

}  // namespace ecgr
