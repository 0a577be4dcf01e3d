#pragma once

#include "ecgr/nn/tensor.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ecgr::nn {

/// Base class of every network layer.
///
/// Besides the usual forward/backward pair, piecewise-linear layers support
/// a tangent (forward-mode) pass and its reverse. Running the tangent pass
/// with direction v and reversing it yields the parameter gradient of the
/// directional derivative v . d(output)/d(input), which is what the
/// gradient-penalty term needs. The tangent pass reuses the activation masks
/// cached by the most recent forward call.
template <typename Scalar>
class Layer {
 public:
  using Mat = Matrix<Scalar>;

  explicit Layer(Shape in, Shape out, Group group) : in_(in), out_(out), group_(group) {}
  virtual ~Layer() = default;

  [[nodiscard]] virtual std::string kind() const = 0;
  [[nodiscard]] virtual nlohmann::json config() const { return nlohmann::json::object(); }
  [[nodiscard]] virtual std::unique_ptr<Layer> clone() const = 0;

  virtual Mat forward(const Mat& x, Mode mode, Rng& rng) = 0;
  // Inference-mode forward pass that touches no cached state; safe to call
  // concurrently on a shared layer.
  [[nodiscard]] virtual Mat infer(const Mat& x) const = 0;
  // Accumulates parameter gradients (unless frozen); returns the input
  // gradient when need_input_grad is set, an empty matrix otherwise.
  virtual Mat backward(const Mat& dy, bool need_input_grad) = 0;

  virtual Mat forward_tangent(const Mat& /*tx*/) {
    throw std::logic_error(kind() + " layer does not support tangent propagation");
  }
  virtual Mat backward_tangent(const Mat& /*dty*/) {
    throw std::logic_error(kind() + " layer does not support tangent propagation");
  }

  virtual std::vector<Parameter<Scalar>*> parameters() { return {}; }
  // Non-trainable state that must be checkpointed (batch-norm statistics).
  virtual std::vector<std::pair<std::string, Mat*>> buffers() { return {}; }

  [[nodiscard]] nlohmann::json descriptor() {
    nlohmann::json d = {{"kind", kind()},
                        {"input", in_.str()},
                        {"output", out_.str()},
                        {"group", group_name(group_)},
                        {"config", config()}};
    Eigen::Index n = 0;
    for (auto* p : parameters()) n += p->size();
    d["parameters"] = n;
    return d;
  }

  [[nodiscard]] Shape input_shape() const { return in_; }
  [[nodiscard]] Shape output_shape() const { return out_; }
  [[nodiscard]] Group group() const { return group_; }
  [[nodiscard]] bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto* p : parameters()) p->frozen = frozen;
  }

 protected:
  void check_input(const Mat& x) const {
    if (x.rows() != in_.size()) {
      throw ShapeError(kind() + ": expected " + std::to_string(in_.size()) + " features per sample (" +
                       in_.str() + "), got " + std::to_string(x.rows()));
    }
  }

  Shape in_;
  Shape out_;
  Group group_;
  bool frozen_ = false;
};

template <typename Scalar>
class Dense final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  Dense(Shape in, int units, Group group, Rng& rng)
      : Layer<Scalar>(in, Shape{1, 1, units}, group) {
    weight_.name = "kernel";
    weight_.value.resize(units, in.size());
    glorot_uniform(weight_.value, in.size(), units, rng);
    weight_.grad = Mat::Zero(units, in.size());
    bias_.name = "bias";
    bias_.value = Mat::Zero(units, 1);
    bias_.grad = Mat::Zero(units, 1);
    weight_.group = bias_.group = group;
  }

  [[nodiscard]] std::string kind() const override { return "dense"; }
  [[nodiscard]] nlohmann::json config() const override { return {{"units", this->out_.size()}}; }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Dense>(*this); }

  Mat forward(const Mat& x, Mode, Rng&) override {
    this->check_input(x);
    x_ = x;
    Mat y = weight_.value * x;
    y.colwise() += bias_.value.col(0);
    return y;
  }

  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    Mat y = weight_.value * x;
    y.colwise() += bias_.value.col(0);
    return y;
  }

  Mat backward(const Mat& dy, bool need_input_grad) override {
    if (!this->frozen_) {
      weight_.grad.noalias() += dy * x_.transpose();
      bias_.grad += dy.rowwise().sum();
    }
    if (!need_input_grad) return {};
    return weight_.value.transpose() * dy;
  }

  Mat forward_tangent(const Mat& tx) override {
    tx_ = tx;
    return weight_.value * tx;
  }

  Mat backward_tangent(const Mat& dty) override {
    if (!this->frozen_) weight_.grad.noalias() += dty * tx_.transpose();
    return weight_.value.transpose() * dty;
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Mat x_;
  Mat tx_;
};

/// 2-D convolution with TensorFlow-style "same" padding, lowered to a single
/// GEMM over an im2col buffer covering the whole batch.
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  Conv2d(Shape in, int filters, int kernel, int stride, Group group, Rng& rng)
      : Layer<Scalar>(in, Shape{}, group), kernel_(kernel), stride_(stride) {
    if (kernel < 1 || stride < 1) throw ShapeError("conv2d: kernel and stride must be positive");
    const int out_h = (in.height + stride - 1) / stride;
    const int out_w = (in.width + stride - 1) / stride;
    this->out_ = Shape{out_h, out_w, filters};
    pad_top_ = std::max((out_h - 1) * stride + kernel - in.height, 0) / 2;
    pad_left_ = std::max((out_w - 1) * stride + kernel - in.width, 0) / 2;

    const int patch = kernel * kernel * in.channels;
    weight_.name = "kernel";
    weight_.value.resize(filters, patch);
    glorot_uniform(weight_.value, patch, kernel * kernel * filters, rng);
    weight_.grad = Mat::Zero(filters, patch);
    bias_.name = "bias";
    bias_.value = Mat::Zero(filters, 1);
    bias_.grad = Mat::Zero(filters, 1);
    weight_.group = bias_.group = group;
  }

  [[nodiscard]] std::string kind() const override { return "conv2d"; }
  [[nodiscard]] nlohmann::json config() const override {
    return {{"filters", this->out_.channels}, {"kernel", kernel_}, {"stride", stride_}, {"padding", "same"}};
  }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv2d>(*this); }

  Mat forward(const Mat& x, Mode, Rng&) override {
    this->check_input(x);
    im2col(x, col_);
    return apply(col_, true, x.cols());
  }

  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    Mat col;
    im2col(x, col);
    return apply(col, true, x.cols());
  }

  Mat backward(const Mat& dy, bool need_input_grad) override {
    const auto n = dy.cols();
    const auto dy_mat = dy.reshaped(this->out_.channels, n * this->out_.spatial());
    if (!this->frozen_) {
      weight_.grad.noalias() += dy_mat * col_.transpose();
      bias_.grad += dy_mat.rowwise().sum();
    }
    if (!need_input_grad) return {};
    const Mat dcol = weight_.value.transpose() * dy_mat;
    return col2im(dcol, n);
  }

  Mat forward_tangent(const Mat& tx) override {
    im2col(tx, tcol_);
    return apply(tcol_, false, tx.cols());
  }

  Mat backward_tangent(const Mat& dty) override {
    const auto n = dty.cols();
    const auto dty_mat = dty.reshaped(this->out_.channels, n * this->out_.spatial());
    if (!this->frozen_) weight_.grad.noalias() += dty_mat * tcol_.transpose();
    const Mat dcol = weight_.value.transpose() * dty_mat;
    return col2im(dcol, n);
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  Mat apply(const Mat& col, bool with_bias, Eigen::Index n) const {
    Mat y = weight_.value * col;
    if (with_bias) y.colwise() += bias_.value.col(0);
    return y.reshaped(this->out_.size(), n);
  }

  void im2col(const Mat& x, Mat& col) const {
    const Shape in = this->in_;
    const Shape out = this->out_;
    const int c = in.channels;
    const Eigen::Index n = x.cols();
    col.resize(static_cast<Eigen::Index>(kernel_) * kernel_ * c, n * out.spatial());
    for (Eigen::Index s = 0; s < n; ++s) {
      const Scalar* src = x.col(s).data();
      for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
          Scalar* dst = col.col(s * out.spatial() + oy * out.width + ox).data();
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - pad_top_ + ky;
            Scalar* row = dst + ky * kernel_ * c;
            if (iy < 0 || iy >= in.height) {
              std::fill_n(row, kernel_ * c, Scalar(0));
              continue;
            }
            const int ix0 = ox * stride_ - pad_left_;
            if (ix0 >= 0 && ix0 + kernel_ <= in.width) {
              std::copy_n(src + (iy * in.width + ix0) * c, kernel_ * c, row);
              continue;
            }
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= in.width)
                std::fill_n(row + kx * c, c, Scalar(0));
              else
                std::copy_n(src + (iy * in.width + ix) * c, c, row + kx * c);
            }
          }
        }
      }
    }
  }

  Mat col2im(const Mat& col, Eigen::Index n) const {
    const Shape in = this->in_;
    const Shape out = this->out_;
    const int c = in.channels;
    Mat x = Mat::Zero(in.size(), n);
    for (Eigen::Index s = 0; s < n; ++s) {
      Scalar* dst = x.col(s).data();
      for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
          const Scalar* src = col.col(s * out.spatial() + oy * out.width + ox).data();
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - pad_top_ + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - pad_left_ + kx;
              if (ix < 0 || ix >= in.width) continue;
              Scalar* d = dst + (iy * in.width + ix) * c;
              const Scalar* v = src + (ky * kernel_ + kx) * c;
              for (int ch = 0; ch < c; ++ch) d[ch] += v[ch];
            }
          }
        }
      }
    }
    return x;
  }

  int kernel_;
  int stride_;
  int pad_top_ = 0;
  int pad_left_ = 0;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Mat col_;
  Mat tcol_;
};

/// Per-channel batch normalisation. Works on dense activations (1x1xC) and
/// feature maps alike. A frozen layer always normalises with its running
/// statistics and never updates them.
template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  BatchNorm(Shape in, Group group, double momentum = 0.1, double epsilon = 1e-3)
      : Layer<Scalar>(in, in, group), momentum_(momentum), epsilon_(epsilon) {
    const int c = in.channels;
    gamma_.name = "gamma";
    gamma_.value = Mat::Ones(c, 1);
    gamma_.grad = Mat::Zero(c, 1);
    beta_.name = "beta";
    beta_.value = Mat::Zero(c, 1);
    beta_.grad = Mat::Zero(c, 1);
    gamma_.group = beta_.group = group;
    running_mean_ = Mat::Zero(c, 1);
    running_var_ = Mat::Ones(c, 1);
  }

  [[nodiscard]] std::string kind() const override { return "batch_norm"; }
  [[nodiscard]] nlohmann::json config() const override {
    return {{"momentum", momentum_}, {"epsilon", epsilon_}};
  }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Mat forward(const Mat& x, Mode mode, Rng&) override {
    this->check_input(x);
    const int c = this->in_.channels;
    const Eigen::Index m = x.size() / c;
    const auto xm = x.reshaped(c, m);
    training_ = mode == Mode::train && !this->frozen_;
    Vector<Scalar> mean;
    Vector<Scalar> var;
    if (training_) {
      mean = xm.rowwise().mean();
      var = (xm.colwise() - mean).array().square().rowwise().mean().matrix();
      const Scalar unbias = m > 1 ? Scalar(m) / Scalar(m - 1) : Scalar(1);
      const auto mom = static_cast<Scalar>(momentum_);
      running_mean_ = (Scalar(1) - mom) * running_mean_ + mom * mean;
      running_var_ = (Scalar(1) - mom) * running_var_ + mom * unbias * var;
    } else {
      mean = running_mean_.col(0);
      var = running_var_.col(0);
    }
    inv_std_ = (var.array() + Scalar(epsilon_)).rsqrt().matrix();
    xhat_ = (xm.colwise() - mean).array().colwise() * inv_std_.array();
    Mat y = (xhat_.array().colwise() * gamma_.value.col(0).array()).colwise() + beta_.value.col(0).array();
    return y.reshaped(x.rows(), x.cols());
  }

  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    const int c = this->in_.channels;
    const auto xm = x.reshaped(c, x.size() / c);
    const Vector<Scalar> scale =
        (gamma_.value.col(0).array() * (running_var_.col(0).array() + Scalar(epsilon_)).rsqrt()).matrix();
    Mat y = ((xm.colwise() - running_mean_.col(0)).array().colwise() * scale.array()).colwise() +
            beta_.value.col(0).array();
    return y.reshaped(x.rows(), x.cols());
  }

  Mat backward(const Mat& dy, bool need_input_grad) override {
    const int c = this->in_.channels;
    const Eigen::Index m = dy.size() / c;
    const auto dym = dy.reshaped(c, m);
    if (!this->frozen_) {
      gamma_.grad += (dym.array() * xhat_.array()).rowwise().sum().matrix();
      beta_.grad += dym.rowwise().sum();
    }
    if (!need_input_grad) return {};
    const Mat dxhat = dym.array().colwise() * gamma_.value.col(0).array();
    Mat dx;
    if (training_) {
      const Vector<Scalar> sum_dxhat = dxhat.rowwise().sum();
      const Vector<Scalar> sum_dxhat_xhat = (dxhat.array() * xhat_.array()).rowwise().sum().matrix();
      dx = ((Scalar(m) * dxhat.array()).colwise() - sum_dxhat.array() -
            xhat_.array().colwise() * sum_dxhat_xhat.array())
               .colwise() *
           (inv_std_.array() / Scalar(m));
    } else {
      dx = dxhat.array().colwise() * inv_std_.array();
    }
    return dx.reshaped(dy.rows(), dy.cols());
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Mat*>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

 private:
  double momentum_;
  double epsilon_;
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  Mat running_mean_;
  Mat running_var_;
  Mat xhat_;
  Vector<Scalar> inv_std_;
  bool training_ = false;
};

/// Leaky ReLU; slope 0 gives the plain ReLU.
template <typename Scalar>
class LeakyRelu final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  LeakyRelu(Shape in, Group group, double slope) : Layer<Scalar>(in, in, group), slope_(slope) {}

  [[nodiscard]] std::string kind() const override { return slope_ == 0.0 ? "relu" : "leaky_relu"; }
  [[nodiscard]] nlohmann::json config() const override { return {{"slope", slope_}}; }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<LeakyRelu>(*this); }

  Mat forward(const Mat& x, Mode, Rng&) override {
    this->check_input(x);
    const auto s = static_cast<Scalar>(slope_);
    mask_ = (x.array() > Scalar(0)).select(Mat::Ones(x.rows(), x.cols()), Mat::Constant(x.rows(), x.cols(), s));
    return x.cwiseProduct(mask_);
  }
  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    const auto s = static_cast<Scalar>(slope_);
    return x.unaryExpr([s](Scalar v) { return v > Scalar(0) ? v : s * v; });
  }
  Mat backward(const Mat& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    return dy.cwiseProduct(mask_);
  }
  Mat forward_tangent(const Mat& tx) override { return tx.cwiseProduct(mask_); }
  Mat backward_tangent(const Mat& dty) override { return dty.cwiseProduct(mask_); }

 private:
  double slope_;
  Mat mask_;
};

template <typename Scalar>
class Tanh final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  Tanh(Shape in, Group group) : Layer<Scalar>(in, in, group) {}

  [[nodiscard]] std::string kind() const override { return "tanh"; }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Tanh>(*this); }

  Mat forward(const Mat& x, Mode, Rng&) override {
    this->check_input(x);
    y_ = x.array().tanh().matrix();
    return y_;
  }
  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    return x.array().tanh().matrix();
  }
  Mat backward(const Mat& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    return (dy.array() * (Scalar(1) - y_.array().square())).matrix();
  }

 private:
  Mat y_;
};

/// 2x2 max pooling, stride 2 (odd trailing rows/columns are dropped).
template <typename Scalar>
class MaxPool2 final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  MaxPool2(Shape in, Group group) : Layer<Scalar>(in, Shape{in.height / 2, in.width / 2, in.channels}, group) {
    if (in.height < 2 || in.width < 2) throw ShapeError("max_pool: input " + in.str() + " is smaller than the 2x2 window");
  }

  [[nodiscard]] std::string kind() const override { return "max_pool"; }
  [[nodiscard]] nlohmann::json config() const override { return {{"pool", 2}, {"stride", 2}}; }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<MaxPool2>(*this); }

  Mat forward(const Mat& x, Mode, Rng&) override {
    this->check_input(x);
    return pool(x, &argmax_);
  }

  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    return pool(x, nullptr);
  }

  Mat backward(const Mat& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Mat dx = Mat::Zero(this->in_.size(), dy.cols());
    scatter(dy, dx);
    return dx;
  }

  Mat forward_tangent(const Mat& tx) override {
    Mat ty(this->out_.size(), tx.cols());
    for (Eigen::Index s = 0; s < tx.cols(); ++s)
      for (int o = 0; o < this->out_.size(); ++o) ty(o, s) = tx(argmax_[static_cast<std::size_t>(s * this->out_.size() + o)], s);
    return ty;
  }

  Mat backward_tangent(const Mat& dty) override {
    Mat dtx = Mat::Zero(this->in_.size(), dty.cols());
    scatter(dty, dtx);
    return dtx;
  }

 private:
  Mat pool(const Mat& x, std::vector<int>* argmax) const {
    const Shape in = this->in_;
    const Shape out = this->out_;
    const int c = in.channels;
    Mat y(out.size(), x.cols());
    if (argmax) argmax->resize(static_cast<std::size_t>(out.size() * x.cols()));
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
      for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
          for (int ch = 0; ch < c; ++ch) {
            int best = ((2 * oy) * in.width + 2 * ox) * c + ch;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const int idx = ((2 * oy + dy) * in.width + 2 * ox + dx) * c + ch;
                if (x(idx, s) > x(best, s)) best = idx;
              }
            }
            const int o = (oy * out.width + ox) * c + ch;
            y(o, s) = x(best, s);
            if (argmax) (*argmax)[static_cast<std::size_t>(s * out.size() + o)] = best;
          }
        }
      }
    }
    return y;
  }

  void scatter(const Mat& dy, Mat& dx) const {
    for (Eigen::Index s = 0; s < dy.cols(); ++s)
      for (int o = 0; o < this->out_.size(); ++o) dx(argmax_[static_cast<std::size_t>(s * this->out_.size() + o)], s) += dy(o, s);
  }

  std::vector<int> argmax_;
};

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
class Upsample2 final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  Upsample2(Shape in, Group group) : Layer<Scalar>(in, Shape{in.height * 2, in.width * 2, in.channels}, group) {}

  [[nodiscard]] std::string kind() const override { return "upsample"; }
  [[nodiscard]] nlohmann::json config() const override { return {{"factor", 2}, {"interpolation", "nearest"}}; }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Upsample2>(*this); }

  Mat forward(const Mat& x, Mode, Rng&) override {
    this->check_input(x);
    return up(x);
  }
  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    return up(x);
  }
  Mat backward(const Mat& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    return down(dy);
  }
  Mat forward_tangent(const Mat& tx) override { return up(tx); }
  Mat backward_tangent(const Mat& dty) override { return down(dty); }

 private:
  Mat up(const Mat& x) const {
    const Shape in = this->in_;
    const Shape out = this->out_;
    const int c = in.channels;
    Mat y(out.size(), x.cols());
    for (Eigen::Index s = 0; s < x.cols(); ++s)
      for (int oy = 0; oy < out.height; ++oy)
        for (int ox = 0; ox < out.width; ++ox)
          y.col(s).segment((oy * out.width + ox) * c, c) = x.col(s).segment(((oy / 2) * in.width + ox / 2) * c, c);
    return y;
  }
  Mat down(const Mat& dy) const {
    const Shape in = this->in_;
    const Shape out = this->out_;
    const int c = in.channels;
    Mat dx = Mat::Zero(in.size(), dy.cols());
    for (Eigen::Index s = 0; s < dy.cols(); ++s)
      for (int oy = 0; oy < out.height; ++oy)
        for (int ox = 0; ox < out.width; ++ox)
          dx.col(s).segment(((oy / 2) * in.width + ox / 2) * c, c) += dy.col(s).segment((oy * out.width + ox) * c, c);
    return dx;
  }
};

/// Inverted dropout. The mask drawn by the last training forward pass is
/// reused by backward and tangent passes.
template <typename Scalar>
class Dropout final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  Dropout(Shape in, Group group, double rate) : Layer<Scalar>(in, in, group), rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }

  [[nodiscard]] std::string kind() const override { return "dropout"; }
  [[nodiscard]] nlohmann::json config() const override { return {{"rate", rate_}}; }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Dropout>(*this); }

  Mat forward(const Mat& x, Mode mode, Rng& rng) override {
    this->check_input(x);
    active_ = mode == Mode::train && rate_ > 0.0;
    if (!active_) return x;
    std::bernoulli_distribution keep(1.0 - rate_);
    const auto scale = static_cast<Scalar>(1.0 / (1.0 - rate_));
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i) mask_.data()[i] = keep(rng) ? scale : Scalar(0);
    return x.cwiseProduct(mask_);
  }
  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    return x;
  }
  Mat backward(const Mat& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    return active_ ? Mat(dy.cwiseProduct(mask_)) : dy;
  }
  Mat forward_tangent(const Mat& tx) override { return active_ ? Mat(tx.cwiseProduct(mask_)) : tx; }
  Mat backward_tangent(const Mat& dty) override { return active_ ? Mat(dty.cwiseProduct(mask_)) : dty; }

 private:
  double rate_;
  bool active_ = false;
  Mat mask_;
};

/// Reinterprets the per-sample feature vector with a new shape. With the HWC
/// layout both flatten and dense-to-map reshapes are data no-ops.
template <typename Scalar>
class Reshape final : public Layer<Scalar> {
 public:
  using Mat = Matrix<Scalar>;

  Reshape(Shape in, Shape out, Group group) : Layer<Scalar>(in, out, group) {
    if (in.size() != out.size()) throw ShapeError("reshape: " + in.str() + " -> " + out.str() + " changes the size");
  }

  [[nodiscard]] std::string kind() const override { return this->out_.spatial() == 1 ? "flatten" : "reshape"; }
  [[nodiscard]] std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Reshape>(*this); }

  Mat forward(const Mat& x, Mode, Rng&) override {
    this->check_input(x);
    return x;
  }
  [[nodiscard]] Mat infer(const Mat& x) const override {
    this->check_input(x);
    return x;
  }
  Mat backward(const Mat& dy, bool need_input_grad) override { return need_input_grad ? dy : Mat{}; }
  Mat forward_tangent(const Mat& tx) override { return tx; }
  Mat backward_tangent(const Mat& dty) override { return dty; }
};

}  // namespace ecgr::nn
