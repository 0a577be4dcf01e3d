#pragma once

#include "ecgr/data.hpp"
#include "ecgr/nn/sequential.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ecgr {

enum class TrainableScope { all, fc_only };

/// Classifier layout: `block_filters.size()` blocks of `convs_per_block`
/// conv + batch-norm + ReLU layers, each block closed by 2x2 max pooling,
/// then dense + batch-norm + ReLU + dropout layers and a softmax head.
/// The defaults give roughly 19.3M parameters at 48x48.
struct ClassifierArch {
  std::vector<int> block_filters{64, 128, 256};
  int convs_per_block = 2;
  int kernel = 3;
  std::vector<int> dense_units{1920, 256};
  double dropout = 0.3;

  bool operator==(const ClassifierArch&) const = default;
};

/// Generator layout: dense projection to a (size / 2^k) square map with
/// `base_filters` channels, then k blocks of nearest upsampling + conv +
/// batch-norm + leaky ReLU, then a single-filter conv with tanh output.
/// Defaults give roughly 1.6M parameters at 48x48 with 128-d noise.
struct GeneratorArch {
  int base_filters = 256;
  std::vector<int> up_filters{128, 64, 32};
  int kernel = 3;
  double slope = 0.2;

  bool operator==(const GeneratorArch&) const = default;
};

/// Critic layout: strided conv + leaky ReLU + dropout blocks and a linear
/// scalar head. No normalisation layers. Defaults give roughly 4.3M
/// parameters at 48x48.
struct CriticArch {
  std::vector<int> filters{64, 128, 256, 512};
  std::vector<int> strides{2, 2, 2, 1};
  int kernel = 5;
  double slope = 0.2;
  double dropout = 0.3;

  bool operator==(const CriticArch&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClassifierArch, block_filters, convs_per_block, kernel, dense_units,
                                                dropout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorArch, base_filters, up_filters, kernel, slope)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CriticArch, filters, strides, kernel, slope, dropout)

/// Anything that maps images to class probabilities.
class ImageClassifier {
 public:
  virtual ~ImageClassifier() = default;
  [[nodiscard]] virtual int num_classes() const = 0;
  [[nodiscard]] virtual int image_size() const = 0;
  /// One row of class probabilities per image.
  [[nodiscard]] virtual Eigen::MatrixXd predict_proba(const std::vector<LabeledImage>& images) const = 0;
};

/// Anything that synthesises labelled images of one class.
class ImageGenerator {
 public:
  virtual ~ImageGenerator() = default;
  [[nodiscard]] virtual EmotionClass class_tag() const = 0;
  [[nodiscard]] virtual std::string id() const = 0;
  [[nodiscard]] virtual std::vector<LabeledImage> generate(int n, std::uint64_t seed) const = 0;
};

/// Column-wise softmax of a (classes x batch) logit matrix.
template <typename Derived>
[[nodiscard]] typename Derived::PlainObject softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
  using Plain = typename Derived::PlainObject;
  Plain out = logits.derived();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    auto col = out.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return out;
}

template <typename Scalar>
class BasicClassifier final : public ImageClassifier {
 public:
  BasicClassifier(nn::Sequential<Scalar> net, int num_classes, int image_size, ClassifierArch arch)
      : net_(std::move(net)), num_classes_(num_classes), image_size_(image_size), arch_(std::move(arch)) {}

  [[nodiscard]] int num_classes() const override { return num_classes_; }
  [[nodiscard]] int image_size() const override { return image_size_; }
  [[nodiscard]] const ClassifierArch& arch() const { return arch_; }
  [[nodiscard]] TrainableScope trainable_scope() const { return scope_; }

  void set_trainable_scope(TrainableScope scope) {
    scope_ = scope;
    net_.set_group_frozen(nn::Group::features, scope == TrainableScope::fc_only);
  }

  nn::Sequential<Scalar>& net() { return net_; }
  [[nodiscard]] const nn::Sequential<Scalar>& net() const { return net_; }

  /// Inference-mode class probabilities, (classes x batch).
  [[nodiscard]] nn::Matrix<Scalar> probabilities(const nn::Matrix<Scalar>& batch) const {
    return softmax_columns(net_.infer(batch));
  }

  [[nodiscard]] Eigen::MatrixXd predict_proba(const std::vector<LabeledImage>& images) const override;

 private:
  nn::Sequential<Scalar> net_;
  int num_classes_;
  int image_size_;
  ClassifierArch arch_;
  TrainableScope scope_ = TrainableScope::all;
};

template <typename Scalar>
class BasicGenerator final : public ImageGenerator {
 public:
  BasicGenerator(nn::Sequential<Scalar> net, int noise_dim, int image_size, EmotionClass tag, GeneratorArch arch,
                 std::string id)
      : net_(std::move(net)), noise_dim_(noise_dim), image_size_(image_size), tag_(tag), arch_(std::move(arch)),
        id_(std::move(id)) {}

  [[nodiscard]] EmotionClass class_tag() const override { return tag_; }
  [[nodiscard]] std::string id() const override { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  [[nodiscard]] int noise_dim() const { return noise_dim_; }
  [[nodiscard]] int image_size() const { return image_size_; }
  [[nodiscard]] const GeneratorArch& arch() const { return arch_; }

  nn::Sequential<Scalar>& net() { return net_; }
  [[nodiscard]] const nn::Sequential<Scalar>& net() const { return net_; }

  /// Standard-normal noise, (noise_dim x n).
  [[nodiscard]] nn::Matrix<Scalar> sample_noise(int n, nn::Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    nn::Matrix<Scalar> z(noise_dim_, n);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<Scalar>(normal(rng));
    return z;
  }

  /// Inference-mode output in [-1, 1], (pixels x batch).
  [[nodiscard]] nn::Matrix<Scalar> render(const nn::Matrix<Scalar>& noise) const { return net_.infer(noise); }

  [[nodiscard]] std::vector<LabeledImage> generate(int n, std::uint64_t seed) const override;

 private:
  nn::Sequential<Scalar> net_;
  int noise_dim_;
  int image_size_;
  EmotionClass tag_;
  GeneratorArch arch_;
  std::string id_;
};

template <typename Scalar>
class BasicCritic {
 public:
  BasicCritic(nn::Sequential<Scalar> net, int image_size, CriticArch arch)
      : net_(std::move(net)), image_size_(image_size), arch_(std::move(arch)) {
    if (net_.output_shape().size() != 1) throw nn::ShapeError("critic must produce one score per image");
  }

  [[nodiscard]] int image_size() const { return image_size_; }
  [[nodiscard]] const CriticArch& arch() const { return arch_; }
  nn::Sequential<Scalar>& net() { return net_; }
  [[nodiscard]] const nn::Sequential<Scalar>& net() const { return net_; }

  /// Inference-mode scores, one per column of the batch.
  [[nodiscard]] nn::Vector<Scalar> scores(const nn::Matrix<Scalar>& batch) const {
    return net_.infer(batch).row(0).transpose();
  }

 private:
  nn::Sequential<Scalar> net_;
  int image_size_;
  CriticArch arch_;
};

using ClassifierModel = BasicClassifier<float>;
using GeneratorModel = BasicGenerator<float>;
using CriticModel = BasicCritic<float>;

template <typename Scalar = float>
[[nodiscard]] BasicClassifier<Scalar> build_classifier(int num_classes, int image_size, const ClassifierArch& arch = {},
                                                       std::uint64_t seed = 0);

template <typename Scalar = float>
[[nodiscard]] BasicGenerator<Scalar> build_generator(int noise_dim, int image_size, EmotionClass class_tag,
                                                     const GeneratorArch& arch = {}, std::uint64_t seed = 0);

template <typename Scalar = float>
[[nodiscard]] BasicCritic<Scalar> build_critic(int image_size, const CriticArch& arch = {}, std::uint64_t seed = 0);

/// Smallest image size the classifier's pooling stack accepts.
[[nodiscard]] int classifier_min_image_size(const ClassifierArch& arch);

struct Prediction {
  Eigen::MatrixXd probabilities;  // one row per image
  std::vector<int> labels;        // argmax, ties to the lowest class id
  std::vector<double> confidences;
};

[[nodiscard]] Prediction predictions_from_probabilities(const Eigen::MatrixXd& probabilities);
[[nodiscard]] Prediction classifier_predict(const ImageClassifier& model, const std::vector<LabeledImage>& images);

/// Total parameter elements; with trainable_only, frozen ones are excluded.
template <typename Scalar>
[[nodiscard]] long long count_parameters(const nn::Sequential<Scalar>& net, bool trainable_only = false) {
  return net.parameter_count(trainable_only);
}
template <typename Model>
[[nodiscard]] long long count_parameters(const Model& model, bool trainable_only = false)
  requires requires { model.net(); }
{
  return model.net().parameter_count(trainable_only);
}

}  // namespace ecgr
