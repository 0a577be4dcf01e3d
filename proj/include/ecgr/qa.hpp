#pragma once

#include "ecgr/data.hpp"
#include "ecgr/models.hpp"

#include "json.hpp"

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace ecgr {

struct QaConfig {
  double confidence_threshold = 0.0;
  bool require_correct_label = true;

  void validate() const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(QaConfig, confidence_threshold, require_correct_label)

struct QaClassStats {
  int accepted = 0;
  int rejected = 0;
  double mean_accepted_confidence = 0.0;  // 0 when nothing was accepted
  std::vector<std::string> rejected_ids;

  [[nodiscard]] int generated() const { return accepted + rejected; }
};

struct QaReport {
  std::array<QaClassStats, kNumClasses> classes{};

  [[nodiscard]] int accepted() const;
  [[nodiscard]] int rejected() const;
  /// Classes that had candidates but none survived.
  [[nodiscard]] std::vector<EmotionClass> fully_rejected() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static QaReport from_json(const nlohmann::json& j);
};

/// The acceptance rule for one candidate, given the classifier's probability
/// row and the candidate's intended label.
[[nodiscard]] bool qa_accepts(const Eigen::Ref<const Eigen::RowVectorXd>& probabilities, int intended,
                              const QaConfig& cfg);

/// Keeps candidates whose predicted class is the intended one and whose
/// confidence reaches the threshold. Accepted samples are weighted by the
/// probability of their intended class.
[[nodiscard]] std::pair<std::vector<WeightedSample>, QaReport> qa_filter(const ImageClassifier& classifier,
                                                                         const std::vector<LabeledImage>& candidates,
                                                                         const QaConfig& cfg);

/// Same samples with every weight set to 1.
[[nodiscard]] std::vector<WeightedSample> strip_weights(std::vector<WeightedSample> samples);

}  // namespace ecgr
