#include "ecgr/gan.hpp"

#include "ecgr/seed.hpp"

#include <chrono>
#include <numeric>
#include <sstream>

namespace ecgr {

void GanConfig::validate() const {
  if (!(lambda_gp > 0.0)) throw ValidationError("lambda_gp must be positive");
  if (n_critic < 1) throw ValidationError("n_critic must be at least 1");
  if (batch_size < 2) throw ValidationError("GAN batch size must be at least 2");
  if (epochs < 1) throw ValidationError("GAN epochs must be at least 1");
  if (noise_dim < 1) throw ValidationError("noise dimension must be positive");
}

long GanTrainLog::count(Kind kind) const {
  return std::count_if(entries.begin(), entries.end(), [kind](const Entry& e) { return e.kind == kind; });
}

std::string GanTrainLog::csv() const {
  std::ostringstream out;
  out << "step,kind,loss,gp,seconds\n";
  for (const auto& e : entries)
    out << e.step << ',' << (e.kind == Kind::critic ? "critic" : "generator") << ','
        << fmt::format("{:.8f},{:.8f},{:.6f}", e.loss, e.gp, e.seconds) << '\n';
  return out.str();
}

template <typename Scalar>
nn::Matrix<Scalar> interpolate(const nn::Matrix<Scalar>& real, const nn::Matrix<Scalar>& fake, nn::Rng& rng) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols())
    throw ValidationError(fmt::format("gradient penalty: real batch is {}x{} but fake batch is {}x{}", real.rows(),
                                      real.cols(), fake.rows(), fake.cols()));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  nn::Matrix<Scalar> out(real.rows(), real.cols());
  for (Eigen::Index j = 0; j < real.cols(); ++j) {
    const auto eps = static_cast<Scalar>(unit(rng));
    out.col(j) = eps * real.col(j) + (Scalar(1) - eps) * fake.col(j);
  }
  return out;
}

namespace {

template <typename Scalar>
nn::Vector<Scalar> column_norms(const nn::Matrix<Scalar>& g) {
  return g.colwise().norm().transpose();
}

template <typename Scalar>
void check_gan_range(const nn::Matrix<Scalar>& x, const char* what) {
  if (x.size() > 0 && (x.minCoeff() < Scalar(-1) || x.maxCoeff() > Scalar(1)))
    throw ValidationError(std::string(what) + " batch has values outside [-1, 1]");
}

}  // namespace

template <typename Scalar>
Scalar gradient_penalty(const BasicCritic<Scalar>& critic, const nn::Matrix<Scalar>& real,
                        const nn::Matrix<Scalar>& fake, std::uint64_t seed) {
  check_gan_range(real, "real");
  check_gan_range(fake, "fake");
  nn::Rng rng(seed);
  const nn::Matrix<Scalar> x_hat = interpolate(real, fake, rng);
  nn::Sequential<Scalar> net = critic.net();
  net.forward(x_hat, nn::Mode::infer, rng);
  const nn::Matrix<Scalar> grad = net.input_gradient(nn::Matrix<Scalar>::Ones(1, x_hat.cols()));
  const nn::Vector<Scalar> norms = column_norms(grad);
  if (!norms.allFinite()) throw DivergenceError("gradient penalty: critic input gradient is non-finite");
  return (norms.array() - Scalar(1)).square().mean();
}

template <typename Scalar>
Scalar accumulate_gradient_penalty(nn::Sequential<Scalar>& critic, const nn::Matrix<Scalar>& interpolates,
                                   Scalar lambda, nn::Mode mode, nn::Rng& rng) {
  const Eigen::Index n = interpolates.cols();
  critic.forward(interpolates, mode, rng);
  const nn::Matrix<Scalar> grad = critic.input_gradient(nn::Matrix<Scalar>::Ones(1, n));
  const nn::Vector<Scalar> norms = column_norms(grad);
  if (!norms.allFinite()) throw DivergenceError("gradient penalty: critic input gradient is non-finite");
  const Scalar penalty = (norms.array() - Scalar(1)).square().mean();

  // d/dtheta of lambda * mean_i (|g_i| - 1)^2 equals d/dtheta of
  // sum_i v_i . g_i(theta) with v_i = lambda * 2 (|g_i| - 1) / (n |g_i|) g_i
  // held fixed, i.e. the parameter gradient of the directional derivative of
  // the critic along v_i.
  nn::Matrix<Scalar> direction(grad.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Scalar norm = norms(j);
    const Scalar coeff = norm > Scalar(0) ? lambda * Scalar(2) * (norm - Scalar(1)) / (Scalar(n) * norm) : Scalar(0);
    direction.col(j) = coeff * grad.col(j);
  }
  critic.forward_tangent(direction);
  critic.backward_tangent(nn::Matrix<Scalar>::Ones(1, n));
  return penalty;
}

template <typename Scalar>
GanTrainLog train_wgangp(nn::Sequential<Scalar>& generator, nn::Sequential<Scalar>& critic, int noise_dim,
                         const nn::Matrix<Scalar>& real, const GanConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = real.cols();
  if (n < cfg.batch_size)
    throw ValidationError(fmt::format("GAN training needs at least batch_size={} samples, got {}", cfg.batch_size, n));
  if (generator.output_shape().size() != real.rows() || critic.input_shape().size() != real.rows())
    throw ValidationError("generator output, critic input and data dimension disagree");
  check_gan_range(real, "real");

  nn::Rng rng(derive_seed(cfg.seed, "wgangp-loop"));
  nn::Adam<Scalar> opt_g({cfg.optimizer.learning_rate, cfg.optimizer.beta1, cfg.optimizer.beta2});
  nn::Adam<Scalar> opt_c({cfg.optimizer.learning_rate, cfg.optimizer.beta1, cfg.optimizer.beta2});
  std::normal_distribution<double> normal(0.0, 1.0);
  auto noise = [&](Eigen::Index cols) {
    nn::Matrix<Scalar> z(noise_dim, cols);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<Scalar>(normal(rng));
    return z;
  };

  const auto bs = static_cast<Eigen::Index>(cfg.batch_size);
  const Eigen::Index batches = n / bs;
  const auto lambda = static_cast<Scalar>(cfg.lambda_gp);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  GanTrainLog log;
  long step = 0;
  generator.zero_grad();
  critic.zero_grad();
  auto diverged = [&](const std::string& what) {
    return DivergenceError(fmt::format("WGAN-GP diverged at step {}: {}", step, what), log.csv());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index b = 0; b < batches; ++b) {
      nn::Matrix<Scalar> real_batch(real.rows(), bs);
      for (Eigen::Index j = 0; j < bs; ++j) real_batch.col(j) = real.col(order[static_cast<std::size_t>(b * bs + j)]);

      for (int k = 0; k < cfg.n_critic; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        const nn::Matrix<Scalar> fake = generator.forward(noise(bs), nn::Mode::train, rng);
        const nn::Matrix<Scalar> real_scores = critic.forward(real_batch, nn::Mode::train, rng);
        critic.backward(nn::Matrix<Scalar>::Constant(1, bs, Scalar(-1) / Scalar(bs)));
        const nn::Matrix<Scalar> fake_scores = critic.forward(fake, nn::Mode::train, rng);
        critic.backward(nn::Matrix<Scalar>::Constant(1, bs, Scalar(1) / Scalar(bs)));
        const nn::Matrix<Scalar> x_hat = interpolate(real_batch, fake, rng);
        double gp = 0.0;
        try {
          gp = static_cast<double>(accumulate_gradient_penalty(critic, x_hat, lambda, nn::Mode::train, rng));
        } catch (const DivergenceError& e) {
          throw diverged(e.what());
        }
        double loss = 0.0;
        try {
          loss = critic_loss(real_scores.row(0), fake_scores.row(0), gp, cfg.lambda_gp);
        } catch (const DivergenceError& e) {
          throw diverged(e.what());
        }
        opt_c.step(critic.parameters());
        critic.zero_grad();
        generator.zero_grad();
        log.entries.push_back({++step, GanTrainLog::Kind::critic, loss, gp,
                               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
      }

      const auto t0 = std::chrono::steady_clock::now();
      const nn::Matrix<Scalar> fake = generator.forward(noise(bs), nn::Mode::train, rng);
      const nn::Matrix<Scalar> scores = critic.forward(fake, nn::Mode::train, rng);
      double loss = 0.0;
      try {
        loss = generator_loss(scores.row(0));
      } catch (const DivergenceError& e) {
        throw diverged(e.what());
      }
      const nn::Matrix<Scalar> dx = critic.input_gradient(nn::Matrix<Scalar>::Constant(1, bs, Scalar(-1) / Scalar(bs)));
      generator.backward(dx);
      opt_g.step(generator.parameters());
      generator.zero_grad();
      log.entries.push_back({++step, GanTrainLog::Kind::generator, loss, 0.0,
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }
  }
  return log;
}

template <typename Scalar>
std::pair<BasicGenerator<Scalar>, GanTrainLog> train_wgangp_for_class(const std::vector<LabeledImage>& class_samples,
                                                                      const GanConfig& cfg) {
  cfg.validate();
  if (class_samples.empty()) throw ValidationError("GAN training needs at least one sample");
  const EmotionClass label = class_samples.front().label;
  for (const auto& s : class_samples)
    if (s.label != label) throw ValidationError("GAN training samples must all share one class");
  if (static_cast<int>(class_samples.size()) < cfg.batch_size)
    throw ValidationError(fmt::format("class '{}' has {} samples, fewer than the GAN batch size {}", class_name(label),
                                      class_samples.size(), cfg.batch_size));
  const int image_size = static_cast<int>(class_samples.front().pixels.rows());

  auto gen = build_generator<Scalar>(cfg.noise_dim, image_size, label, cfg.generator,
                                     derive_seed(cfg.seed, "generator-init"));
  auto critic = build_critic<Scalar>(image_size, cfg.critic, derive_seed(cfg.seed, "critic-init"));
  const nn::Matrix<Scalar> real = to_gan_range(to_batch(class_samples)).template cast<Scalar>();
  GanTrainLog log = train_wgangp(gen.net(), critic.net(), cfg.noise_dim, real, cfg);
  return {std::move(gen), std::move(log)};
}

std::vector<LabeledImage> generate_samples(const ImageGenerator& gen, int n, std::uint64_t seed) {
  auto images = gen.generate(n, seed);
  for (auto& img : images) img.label = gen.class_tag();
  return images;
}

template nn::Matrix<float> interpolate(const nn::Matrix<float>&, const nn::Matrix<float>&, nn::Rng&);
template nn::Matrix<double> interpolate(const nn::Matrix<double>&, const nn::Matrix<double>&, nn::Rng&);
template float gradient_penalty(const BasicCritic<float>&, const nn::Matrix<float>&, const nn::Matrix<float>&,
                                std::uint64_t);
template double gradient_penalty(const BasicCritic<double>&, const nn::Matrix<double>&, const nn::Matrix<double>&,
                                 std::uint64_t);
template float accumulate_gradient_penalty(nn::Sequential<float>&, const nn::Matrix<float>&, float, nn::Mode, nn::Rng&);
template double accumulate_gradient_penalty(nn::Sequential<double>&, const nn::Matrix<double>&, double, nn::Mode,
                                            nn::Rng&);
template GanTrainLog train_wgangp(nn::Sequential<float>&, nn::Sequential<float>&, int, const nn::Matrix<float>&,
                                  const GanConfig&);
template GanTrainLog train_wgangp(nn::Sequential<double>&, nn::Sequential<double>&, int, const nn::Matrix<double>&,
                                  const GanConfig&);
template std::pair<BasicGenerator<float>, GanTrainLog> train_wgangp_for_class(const std::vector<LabeledImage>&,
                                                                              const GanConfig&);
template std::pair<BasicGenerator<double>, GanTrainLog> train_wgangp_for_class(const std::vector<LabeledImage>&,
                                                                               const GanConfig&);

}  // namespace ecgr
