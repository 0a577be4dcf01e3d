#include "ecgr/models.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace ecgr {

using nn::Group;
using nn::Shape;

namespace {

constexpr Eigen::Index kInferenceChunk = 256;

}  // namespace

int classifier_min_image_size(const ClassifierArch& arch) {
  return std::max(32, 1 << arch.block_filters.size());
}

template <typename Scalar>
BasicClassifier<Scalar> build_classifier(int num_classes, int image_size, const ClassifierArch& arch,
                                         std::uint64_t seed) {
  if (num_classes < 2) throw ValidationError("classifier needs at least 2 classes");
  const int min_size = classifier_min_image_size(arch);
  if (image_size < min_size)
    throw ValidationError(fmt::format("image size {} is too small for the pooling stack: minimum is {}", image_size, min_size));
  if (arch.block_filters.empty() || arch.convs_per_block < 1) throw ValidationError("classifier needs at least one conv block");

  nn::Rng rng(seed);
  nn::Sequential<Scalar> net(Shape{image_size, image_size, 1});
  for (int filters : arch.block_filters) {
    for (int i = 0; i < arch.convs_per_block; ++i) {
      net.template add<nn::Conv2d>(filters, arch.kernel, 1, Group::features, rng);
      net.template add<nn::BatchNorm>(Group::features);
      net.template add<nn::LeakyRelu>(Group::features, 0.0);
    }
    net.template add<nn::MaxPool2>(Group::features);
  }
  net.template add<nn::Reshape>(Shape{1, 1, net.output_shape().size()}, Group::fully_connected);
  for (int units : arch.dense_units) {
    net.template add<nn::Dense>(units, Group::fully_connected, rng);
    net.template add<nn::BatchNorm>(Group::fully_connected);
    net.template add<nn::LeakyRelu>(Group::fully_connected, 0.0);
    net.template add<nn::Dropout>(Group::fully_connected, arch.dropout);
  }
  net.template add<nn::Dense>(num_classes, Group::fully_connected, rng);
  return BasicClassifier<Scalar>(std::move(net), num_classes, image_size, arch);
}

template <typename Scalar>
BasicGenerator<Scalar> build_generator(int noise_dim, int image_size, EmotionClass class_tag, const GeneratorArch& arch,
                                       std::uint64_t seed) {
  if (noise_dim < 8) throw ValidationError("generator noise dimension must be at least 8");
  const int stages = static_cast<int>(arch.up_filters.size());
  const int factor = 1 << stages;
  if (image_size < factor || image_size % factor != 0)
    throw ValidationError(fmt::format("image size {} is not reachable by the upsampling schedule: it must be a positive "
                                      "multiple of {}",
                                      image_size, factor));
  const int base = image_size / factor;

  nn::Rng rng(seed);
  nn::Sequential<Scalar> net(Shape{1, 1, noise_dim});
  net.template add<nn::Dense>(base * base * arch.base_filters, Group::features, rng);
  net.template add<nn::BatchNorm>(Group::features);
  net.template add<nn::LeakyRelu>(Group::features, arch.slope);
  // Per-unit statistics above; per-channel statistics from here on.
  net.template add<nn::Reshape>(Shape{base, base, arch.base_filters}, Group::features);
  for (int filters : arch.up_filters) {
    net.template add<nn::Upsample2>(Group::features);
    net.template add<nn::Conv2d>(filters, arch.kernel, 1, Group::features, rng);
    net.template add<nn::BatchNorm>(Group::features);
    net.template add<nn::LeakyRelu>(Group::features, arch.slope);
  }
  net.template add<nn::Conv2d>(1, arch.kernel, 1, Group::features, rng);
  net.template add<nn::Tanh>(Group::features);
  return BasicGenerator<Scalar>(std::move(net), noise_dim, image_size, class_tag, arch,
                                std::string(class_name(class_tag)));
}

template <typename Scalar>
BasicCritic<Scalar> build_critic(int image_size, const CriticArch& arch, std::uint64_t seed) {
  if (image_size < 32) throw ValidationError(fmt::format("image size {} is too small for the critic: minimum is 32", image_size));
  if (arch.filters.empty() || arch.filters.size() != arch.strides.size())
    throw ValidationError("critic filters and strides must be non-empty and of equal length");

  nn::Rng rng(seed);
  nn::Sequential<Scalar> net(Shape{image_size, image_size, 1});
  for (std::size_t i = 0; i < arch.filters.size(); ++i) {
    net.template add<nn::Conv2d>(arch.filters[i], arch.kernel, arch.strides[i], Group::features, rng);
    net.template add<nn::LeakyRelu>(Group::features, arch.slope);
    net.template add<nn::Dropout>(Group::features, arch.dropout);
  }
  net.template add<nn::Reshape>(Shape{1, 1, net.output_shape().size()}, Group::fully_connected);
  net.template add<nn::Dense>(1, Group::fully_connected, rng);
  return BasicCritic<Scalar>(std::move(net), image_size, arch);
}

template <typename Scalar>
Eigen::MatrixXd BasicClassifier<Scalar>::predict_proba(const std::vector<LabeledImage>& images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), num_classes_);
  if (images.empty()) return out;
  for (const auto& img : images)
    if (img.pixels.rows() != image_size_ || img.pixels.cols() != image_size_)
      throw ValidationError(fmt::format("image {} is {}x{}, classifier expects {}x{}", img.source_id, img.pixels.rows(),
                                        img.pixels.cols(), image_size_, image_size_));
  const Eigen::MatrixXf batch = to_batch(images);
  for (Eigen::Index start = 0; start < batch.cols(); start += kInferenceChunk) {
    const Eigen::Index len = std::min(kInferenceChunk, batch.cols() - start);
    const nn::Matrix<Scalar> chunk = batch.middleCols(start, len).template cast<Scalar>();
    out.middleRows(start, len) = probabilities(chunk).transpose().template cast<double>();
  }
  return out;
}

template <typename Scalar>
std::vector<LabeledImage> BasicGenerator<Scalar>::generate(int n, std::uint64_t seed) const {
  if (n < 1) throw ValidationError("generate: n must be at least 1");
  nn::Rng rng(seed);
  const nn::Matrix<Scalar> noise = sample_noise(n, rng);
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index start = 0; start < n; start += kInferenceChunk) {
    const Eigen::Index len = std::min<Eigen::Index>(kInferenceChunk, n - start);
    const nn::Matrix<Scalar> raw = render(noise.middleCols(start, len)).cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
    const nn::Matrix<Scalar> pixels = from_gan_range(raw);
    for (Eigen::Index j = 0; j < len; ++j) {
      Image img(image_size_, image_size_);
      Eigen::Map<Eigen::VectorXf>(img.data(), img.size()) = pixels.col(j).template cast<float>();
      out.push_back({std::move(img), tag_, fmt::format("{}/seed{}/{}", id_, seed, start + j)});
    }
  }
  return out;
}

Prediction predictions_from_probabilities(const Eigen::MatrixXd& probabilities) {
  Prediction p;
  p.probabilities = probabilities;
  p.labels.resize(static_cast<std::size_t>(probabilities.rows()));
  p.confidences.resize(static_cast<std::size_t>(probabilities.rows()));
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probabilities.cols(); ++c)
      if (probabilities(i, c) > probabilities(i, best)) best = c;
    p.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
    p.confidences[static_cast<std::size_t>(i)] = probabilities(i, best);
  }
  return p;
}

Prediction classifier_predict(const ImageClassifier& model, const std::vector<LabeledImage>& images) {
  Eigen::MatrixXd probs = model.predict_proba(images);
  if (probs.rows() != static_cast<Eigen::Index>(images.size()) || probs.cols() != model.num_classes())
    throw ValidationError("classifier returned a probability matrix of the wrong shape");
  return predictions_from_probabilities(probs);
}

template class BasicClassifier<float>;
template class BasicClassifier<double>;
template class BasicGenerator<float>;
template class BasicGenerator<double>;
template BasicClassifier<float> build_classifier<float>(int, int, const ClassifierArch&, std::uint64_t);
template BasicClassifier<double> build_classifier<double>(int, int, const ClassifierArch&, std::uint64_t);
template BasicGenerator<float> build_generator<float>(int, int, EmotionClass, const GeneratorArch&, std::uint64_t);
template BasicGenerator<double> build_generator<double>(int, int, EmotionClass, const GeneratorArch&, std::uint64_t);
template BasicCritic<float> build_critic<float>(int, const CriticArch&, std::uint64_t);
template BasicCritic<double> build_critic<double>(int, const CriticArch&, std::uint64_t);

}  // namespace ecgr
