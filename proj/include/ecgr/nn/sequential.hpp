#pragma once

#include "ecgr/nn/layers.hpp"

#include <memory>
#include <vector>

namespace ecgr::nn {

/// A linear stack of layers with value semantics (copies are deep).
template <typename Scalar>
class Sequential {
 public:
  using Mat = Matrix<Scalar>;

  explicit Sequential(Shape input = {}) : input_(input) {}

  Sequential(const Sequential& other) : input_(other.input_) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      Sequential tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;
  ~Sequential() = default;

  /// Appends a layer constructed from the current output shape.
  template <template <typename> class L, typename... Args>
  L<Scalar>& add(Args&&... args) {
    auto layer = std::make_unique<L<Scalar>>(output_shape(), std::forward<Args>(args)...);
    auto& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  void push_back(std::unique_ptr<Layer<Scalar>> layer) {
    if (layer->input_shape() != output_shape())
      throw ShapeError("layer input " + layer->input_shape().str() + " does not match " + output_shape().str());
    layers_.push_back(std::move(layer));
  }

  [[nodiscard]] Shape input_shape() const { return input_; }
  [[nodiscard]] Shape output_shape() const { return layers_.empty() ? input_ : layers_.back()->output_shape(); }
  [[nodiscard]] std::size_t size() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<Scalar>& layer(std::size_t i) const { return *layers_.at(i); }

  Mat forward(const Mat& x, Mode mode, Rng& rng) {
    Mat h = x;
    for (auto& l : layers_) h = l->forward(h, mode, rng);
    return h;
  }

  [[nodiscard]] Mat infer(const Mat& x) const {
    Mat h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
  }

  // Backpropagates dy. Stops as soon as no earlier layer has trainable
  // parameters, unless the input gradient is requested.
  Mat backward(const Mat& dy, bool need_input_grad = false) {
    const std::size_t first = need_input_grad ? 0 : first_trainable();
    Mat g = dy;
    for (std::size_t i = layers_.size(); i-- > first;) {
      const bool need = need_input_grad || i > first;
      g = layers_[i]->backward(g, need);
      if (!need) break;
    }
    return g;
  }

  // Input gradient of the last forward pass; parameter gradients are left
  // untouched.
  Mat input_gradient(const Mat& dy) {
    std::vector<bool> saved;
    saved.reserve(layers_.size());
    for (auto& l : layers_) {
      saved.push_back(l->frozen());
      l->set_frozen(true);
    }
    Mat g = backward(dy, true);
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->set_frozen(saved[i]);
    return g;
  }

  Mat forward_tangent(const Mat& tx) {
    Mat t = tx;
    for (auto& l : layers_) t = l->forward_tangent(t);
    return t;
  }

  Mat backward_tangent(const Mat& dty) {
    Mat g = dty;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward_tangent(g);
    return g;
  }

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& l : layers_)
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  std::vector<std::pair<std::string, Mat*>> buffers() {
    std::vector<std::pair<std::string, Mat*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& [name, m] : layers_[i]->buffers()) out.emplace_back(std::to_string(i) + "." + name, m);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.setZero();
  }

  /// Element count of all (or only the unfrozen) parameters.
  [[nodiscard]] long long parameter_count(bool trainable_only = false) const {
    long long n = 0;
    for (const auto& l : layers_)
      for (auto* p : l->parameters())
        if (!trainable_only || !p->frozen) n += p->size();
    return n;
  }

  void set_group_frozen(Group g, bool frozen) {
    for (auto& l : layers_)
      if (l->group() == g) l->set_frozen(frozen);
  }

  [[nodiscard]] nlohmann::json descriptor() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back(l->descriptor());
    return {{"input", input_.str()}, {"output", output_shape().str()}, {"layers", layers}};
  }

 private:
  [[nodiscard]] std::size_t first_trainable() const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto* p : layers_[i]->parameters())
        if (!p->frozen) return i;
    return layers_.size();
  }

  Shape input_;
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

/// Adam with bias correction. Frozen parameters are skipped entirely.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
  };

  explicit Adam(Options opt) : opt_(opt) {}

  void step(const std::vector<Parameter<Scalar>*>& params) {
    if (moments_.empty()) {
      for (auto* p : params) moments_.push_back({Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()),
                                                  Matrix<Scalar>::Zero(p->value.rows(), p->value.cols())});
    }
    if (moments_.size() != params.size()) throw std::logic_error("adam: parameter list changed between steps");
    ++t_;
    const auto b1 = static_cast<Scalar>(opt_.beta1);
    const auto b2 = static_cast<Scalar>(opt_.beta2);
    const auto lr_t = static_cast<Scalar>(opt_.learning_rate * std::sqrt(1.0 - std::pow(opt_.beta2, t_)) /
                                          (1.0 - std::pow(opt_.beta1, t_)));
    const auto eps = static_cast<Scalar>(opt_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (p->frozen) continue;
      auto& [m, v] = moments_[i];
      m = b1 * m + (Scalar(1) - b1) * p->grad;
      v = b2 * v + (Scalar(1) - b2) * p->grad.cwiseAbs2();
      p->value.array() -= lr_t * m.array() / (v.array().sqrt() + eps);
    }
  }

  [[nodiscard]] long long steps() const { return t_; }

 private:
  Options opt_;
  long long t_ = 0;
  std::vector<std::pair<Matrix<Scalar>, Matrix<Scalar>>> moments_;
};

}  // namespace ecgr::nn
