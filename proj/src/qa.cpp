#include "ecgr/qa.hpp"

#include <fmt/format.h>

namespace ecgr {

void QaConfig::validate() const {
  if (!(confidence_threshold >= 0.0 && confidence_threshold < 1.0))
    throw ValidationError(fmt::format("QA confidence threshold {} is outside [0, 1)", confidence_threshold));
}

int QaReport::accepted() const {
  int n = 0;
  for (const auto& c : classes) n += c.accepted;
  return n;
}

int QaReport::rejected() const {
  int n = 0;
  for (const auto& c : classes) n += c.rejected;
  return n;
}

std::vector<EmotionClass> QaReport::fully_rejected() const {
  std::vector<EmotionClass> out;
  for (int c = 0; c < kNumClasses; ++c)
    if (classes[static_cast<std::size_t>(c)].generated() > 0 && classes[static_cast<std::size_t>(c)].accepted == 0)
      out.push_back(class_from_id(c));
  return out;
}

nlohmann::json QaReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& s = classes[static_cast<std::size_t>(c)];
    per_class[std::string(kClassNames[static_cast<std::size_t>(c)])] = {
        {"class_id", c},
        {"accepted", s.accepted},
        {"rejected", s.rejected},
        {"mean_accepted_confidence", s.mean_accepted_confidence},
        {"rejected_ids", s.rejected_ids}};
  }
  nlohmann::json fully = nlohmann::json::array();
  for (auto c : fully_rejected()) fully.push_back(std::string(class_name(c)));
  return {{"accepted", accepted()}, {"rejected", rejected()}, {"fully_rejected_classes", fully}, {"classes", per_class}};
}

QaReport QaReport::from_json(const nlohmann::json& j) {
  QaReport r;
  for (const auto& [name, s] : j.at("classes").items()) {
    const auto c = class_from_name(name);
    if (!c) throw ValidationError("QA report names unknown class '" + name + "'");
    auto& dst = r.classes[static_cast<std::size_t>(class_id(*c))];
    dst.accepted = s.at("accepted").get<int>();
    dst.rejected = s.at("rejected").get<int>();
    dst.mean_accepted_confidence = s.at("mean_accepted_confidence").get<double>();
    dst.rejected_ids = s.at("rejected_ids").get<std::vector<std::string>>();
  }
  return r;
}

bool qa_accepts(const Eigen::Ref<const Eigen::RowVectorXd>& probabilities, int intended, const QaConfig& cfg) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < probabilities.size(); ++c)
    if (probabilities(c) > probabilities(best)) best = c;
  if (cfg.require_correct_label && best != intended) return false;
  return probabilities(intended) >= cfg.confidence_threshold;
}

std::pair<std::vector<WeightedSample>, QaReport> qa_filter(const ImageClassifier& classifier,
                                                           const std::vector<LabeledImage>& candidates,
                                                           const QaConfig& cfg) {
  cfg.validate();
  if (classifier.num_classes() != kNumClasses)
    throw ValidationError(fmt::format("QA classifier has {} classes but the class map has {}", classifier.num_classes(),
                                      kNumClasses));
  QaReport report;
  std::vector<WeightedSample> accepted;
  if (candidates.empty()) return {accepted, report};

  const Prediction pred = classifier_predict(classifier, candidates);
  std::array<double, kNumClasses> confidence_sum{};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int intended = class_id(candidates[i].label);
    auto& stats = report.classes[static_cast<std::size_t>(intended)];
    const auto row = pred.probabilities.row(static_cast<Eigen::Index>(i));
    if (qa_accepts(row, intended, cfg)) {
      const double weight = row(intended);
      accepted.push_back({candidates[i], weight});
      ++stats.accepted;
      confidence_sum[static_cast<std::size_t>(intended)] += weight;
    } else {
      ++stats.rejected;
      stats.rejected_ids.push_back(candidates[i].source_id);
    }
  }
  for (int c = 0; c < kNumClasses; ++c) {
    auto& stats = report.classes[static_cast<std::size_t>(c)];
    if (stats.accepted > 0) stats.mean_accepted_confidence = confidence_sum[static_cast<std::size_t>(c)] / stats.accepted;
  }
  return {std::move(accepted), report};
}

std::vector<WeightedSample> strip_weights(std::vector<WeightedSample> samples) {
  for (auto& s : samples) s.weight = 1.0;
  return samples;
}

}  // namespace ecgr
