#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ecgr::nn {

// A batch is stored as a (features x batch) matrix: one column per sample.
// Spatial features are laid out height-major, channel-fastest (HWC), so a
// column of an H x W x C feature map can be reinterpreted as a C x (H*W)
// matrix without copying.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Rng = std::mt19937_64;

struct Shape {
  int height = 1;
  int width = 1;
  int channels = 1;

  [[nodiscard]] int size() const { return height * width * channels; }
  [[nodiscard]] int spatial() const { return height * width; }
  bool operator==(const Shape&) const = default;
  [[nodiscard]] std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

enum class Mode { train, infer };

// Parameter groups. Fine-tuning freezes everything in the feature group.
enum class Group { features, fully_connected };

inline const char* group_name(Group g) {
  return g == Group::features ? "features" : "fully_connected";
}

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Group group = Group::features;
  bool frozen = false;

  [[nodiscard]] Eigen::Index size() const { return value.size(); }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Glorot-uniform initialisation with the given fan in/out.
template <typename Scalar>
void glorot_uniform(Matrix<Scalar>& w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
}

}  // namespace ecgr::nn
