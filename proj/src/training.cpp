#include "ecgr/training.hpp"

#include <chrono>
#include <numeric>
#include <random>
#include <sstream>

namespace ecgr {

std::string TrainLog::csv() const {
  std::ostringstream out;
  out << "epoch,loss,train_acc,val_acc,seconds\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << fmt::format("{:.8f},{:.6f},", e.loss, e.train_accuracy)
        << (e.validation_accuracy ? fmt::format("{:.6f}", *e.validation_accuracy) : std::string{}) << ','
        << fmt::format("{:.3f}", e.seconds) << '\n';
  }
  return out.str();
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ValidationError(fmt::format("label {} outside 0..{}", labels[i], num_classes - 1));
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

namespace {

void check_training_set(const Dataset& ds, int num_classes, int image_size) {
  if (ds.empty()) throw ValidationError("training set '" + ds.name + "' is empty");
  if (ds.image_size != image_size)
    throw ValidationError(
        fmt::format("training set '{}' has {}px images, model expects {}px", ds.name, ds.image_size, image_size));
  for (const auto& s : ds.samples) {
    if (class_id(s.image.label) >= num_classes)
      throw ValidationError(fmt::format("sample {} has class id {} but the model has {} classes", s.image.source_id,
                                        class_id(s.image.label), num_classes));
    if (!(s.weight > 0.0 && s.weight <= 1.0))
      throw ValidationError(fmt::format("sample {} has weight {} outside (0, 1]", s.image.source_id, s.weight));
  }
}

template <typename Scalar>
double evaluate_accuracy(const BasicClassifier<Scalar>& model, const nn::Matrix<Scalar>& x, const std::vector<int>& y) {
  const nn::Matrix<Scalar> probs = model.probabilities(x);
  int correct = 0;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.rows(); ++c)
      if (probs(c, j) > probs(best, j)) best = c;
    correct += static_cast<int>(best) == y[static_cast<std::size_t>(j)];
  }
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

}  // namespace

template <typename Scalar>
std::pair<BasicClassifier<Scalar>, TrainLog> train_classifier(BasicClassifier<Scalar> model, const Dataset& train_set,
                                                              const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValidationError("training needs at least one epoch");
  if (cfg.batch_size < 1) throw ValidationError("batch size must be at least 1");
  check_training_set(train_set, model.num_classes(), model.image_size());

  const Dataset* fit_set = &train_set;
  Dataset fit_storage;
  Dataset val_set;
  if (cfg.patience > 0) {
    std::tie(fit_storage, val_set) = split_dataset(train_set, cfg.validation_fraction, cfg.seed ^ 0x5eedULL);
    fit_set = &fit_storage;
  }

  const nn::Matrix<Scalar> x_all = to_batch(fit_set->samples).template cast<Scalar>();
  std::vector<int> y_all;
  Eigen::VectorXd w_all(static_cast<Eigen::Index>(fit_set->size()));
  for (std::size_t i = 0; i < fit_set->size(); ++i) {
    y_all.push_back(class_id(fit_set->samples[i].image.label));
    w_all(static_cast<Eigen::Index>(i)) = fit_set->samples[i].weight;
  }
  nn::Matrix<Scalar> x_val;
  std::vector<int> y_val;
  if (!val_set.empty()) {
    x_val = to_batch(val_set.samples).template cast<Scalar>();
    for (const auto& s : val_set.samples) y_val.push_back(class_id(s.image.label));
  }

  model.set_trainable_scope(cfg.scope);
  auto& net = model.net();
  net.zero_grad();
  nn::Adam<Scalar> adam({cfg.optimizer.learning_rate, cfg.optimizer.beta1, cfg.optimizer.beta2});
  nn::Rng rng(cfg.seed);

  TrainLog log;
  std::optional<nn::Sequential<Scalar>> best_net;
  double best_val = -1.0;
  int since_best = 0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(x_all.cols()));
  std::iota(order.begin(), order.end(), 0);
  const auto n = static_cast<Eigen::Index>(order.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (Eigen::Index b = 0; b < n; b += cfg.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - b);
      nn::Matrix<Scalar> xb(x_all.rows(), len);
      std::vector<int> yb(static_cast<std::size_t>(len));
      Eigen::VectorXd wb(len);
      for (Eigen::Index j = 0; j < len; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(b + j)];
        xb.col(j) = x_all.col(src);
        yb[static_cast<std::size_t>(j)] = y_all[static_cast<std::size_t>(src)];
        wb(j) = w_all(src);
      }
      const nn::Matrix<Scalar> logits = net.forward(xb, nn::Mode::train, rng);
      const Eigen::MatrixXd z = logits.transpose().template cast<double>();
      const Eigen::MatrixXd yt = one_hot(yb, model.num_classes());
      const double loss = weighted_cross_entropy(yt, softmax_rows(z), wb);
      if (!std::isfinite(loss)) {
        throw DivergenceError(fmt::format("classifier loss became non-finite at epoch {}", epoch), log.csv());
      }
      loss_sum += loss * static_cast<double>(len);
      for (Eigen::Index j = 0; j < len; ++j) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < z.cols(); ++c)
          if (z(j, c) > z(j, best)) best = c;
        correct += static_cast<int>(best) == yb[static_cast<std::size_t>(j)];
      }
      const Eigen::MatrixXd grad = weighted_cross_entropy_logit_grad(yt, z, wb);
      net.backward(grad.transpose().template cast<Scalar>());
      adam.step(net.parameters());
      net.zero_grad();
    }

    TrainEpoch entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(n);
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!y_val.empty()) entry.validation_accuracy = evaluate_accuracy(model, x_val, y_val);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(entry);

    if (cfg.patience > 0 && entry.validation_accuracy) {
      if (*entry.validation_accuracy > best_val) {
        best_val = *entry.validation_accuracy;
        best_net = net;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (best_net) net = std::move(*best_net);
  return {std::move(model), std::move(log)};
}

template std::pair<BasicClassifier<float>, TrainLog> train_classifier(BasicClassifier<float>, const Dataset&,
                                                                      const TrainConfig&);
template std::pair<BasicClassifier<double>, TrainLog> train_classifier(BasicClassifier<double>, const Dataset&,
                                                                       const TrainConfig&);

}  // namespace ecgr
