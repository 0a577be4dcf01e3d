#pragma once

#include "ecgr/error.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ecgr {

/// The seven emotion classes with their fixed integer ids.
enum class EmotionClass : int { fear = 0, anger, happiness, sadness, disgust, surprise, neutral };

inline constexpr int kNumClasses = 7;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "fear", "anger", "happiness", "sadness", "disgust", "surprise", "neutral"};

[[nodiscard]] inline std::string_view class_name(EmotionClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }
[[nodiscard]] inline int class_id(EmotionClass c) { return static_cast<int>(c); }
[[nodiscard]] std::optional<EmotionClass> class_from_name(std::string_view name);
[[nodiscard]] EmotionClass class_from_id(int id);

/// Single-channel image, row-major so the flat buffer is in scan order.
using Image = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LabeledImage {
  Image pixels;
  EmotionClass label = EmotionClass::fear;
  std::string source_id;
};

struct WeightedSample {
  LabeledImage image;
  double weight = 1.0;
};

enum class Split { train, test, all };

[[nodiscard]] std::string_view split_name(Split s);

struct Dataset {
  std::string name;
  Split split = Split::all;
  int image_size = 0;
  std::vector<WeightedSample> samples;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] bool empty() const { return samples.empty(); }
  [[nodiscard]] std::array<int, kNumClasses> class_counts() const;
  [[nodiscard]] std::vector<LabeledImage> images_of(EmotionClass c) const;
  [[nodiscard]] std::vector<LabeledImage> images() const;
};

/// Loads `<root>/<class_name>/<files>` for all seven classes. Files are read
/// as grayscale, resized to image_size x image_size and scaled to [0, 1].
/// Samples are ordered by path.
[[nodiscard]] Dataset load_image_dataset(const std::filesystem::path& root, int image_size, std::string name);

/// Stratified split: each class contributes ceil(n_c * test_fraction)
/// samples to the test side. Both halves keep the input order.
[[nodiscard]] std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// d_t^u = d_t + d_t': concatenation that keeps each sample's weight.
[[nodiscard]] Dataset unify_datasets(const Dataset& target, const Dataset& synthetic);

/// Checks the pixel-range and size invariants of every sample.
void validate_dataset(const Dataset& ds);

/// CSV with columns source_id,class_id,weight,split.
[[nodiscard]] std::string manifest_csv(const Dataset& ds);

/// Stacks images into a (pixels x batch) matrix, one column per image.
[[nodiscard]] Eigen::MatrixXf to_batch(const std::vector<LabeledImage>& images);
[[nodiscard]] Eigen::MatrixXf to_batch(const std::vector<WeightedSample>& samples);

namespace detail {
inline void require_range(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}
}  // namespace detail

/// Affine map [0, 1] -> [-1, 1] used on generator inputs and outputs.
template <typename Derived>
[[nodiscard]] typename Derived::PlainObject to_gan_range(const Eigen::DenseBase<Derived>& x) {
  using S = typename Derived::Scalar;
  detail::require_range(x.size() == 0 || (x.minCoeff() >= S(0) && x.maxCoeff() <= S(1)),
                        "to_gan_range: input outside [0, 1]");
  return (x.derived().array() * S(2) - S(1)).matrix();
}

/// Affine map [-1, 1] -> [0, 1]; inverse of to_gan_range.
template <typename Derived>
[[nodiscard]] typename Derived::PlainObject from_gan_range(const Eigen::DenseBase<Derived>& x) {
  using S = typename Derived::Scalar;
  detail::require_range(x.size() == 0 || (x.minCoeff() >= S(-1) && x.maxCoeff() <= S(1)),
                        "from_gan_range: input outside [-1, 1]");
  return ((x.derived().array() + S(1)) / S(2)).matrix();
}

}  // namespace ecgr
