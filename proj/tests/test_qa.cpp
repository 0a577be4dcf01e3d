#include "doctest.h"
#include "oracles.hpp"

#include "ecgr/qa.hpp"

#include <map>
#include <random>
#include <set>

using namespace ecgr;

namespace {

// Returns the probability row stored under each candidate's source_id.
class LookupClassifier final : public ImageClassifier {
 public:
  explicit LookupClassifier(std::map<std::string, Eigen::RowVectorXd> rows, int classes = kNumClasses)
      : rows_(std::move(rows)), classes_(classes) {}
  int num_classes() const override { return classes_; }
  int image_size() const override { return 2; }
  Eigen::MatrixXd predict_proba(const std::vector<LabeledImage>& images) const override {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), classes_);
    for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows_.at(images[i].source_id);
    return out;
  }

 private:
  std::map<std::string, Eigen::RowVectorXd> rows_;
  int classes_;
};

LabeledImage candidate(const std::string& id, EmotionClass c) {
  return {Image::Constant(2, 2, 0.5f), c, id};
}

Eigen::RowVectorXd peaked(int cls, double p) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Constant(kNumClasses, (1.0 - p) / (kNumClasses - 1));
  row(cls) = p;
  return row;
}

struct Scenario {
  std::vector<LabeledImage> candidates;
  std::map<std::string, Eigen::RowVectorXd> rows;
};

Scenario random_scenario(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g(0.6, 1.0);
  Scenario s;
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd row(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) row(c) = g(rng) + 1e-9;
    // Some exact ties to exercise the lowest-index rule.
    if (i % 17 == 0) row(1) = row(4) = row.maxCoeff();
    row /= row.sum();
    const std::string id = "c" + std::to_string(i);
    s.rows[id] = row;
    s.candidates.push_back(candidate(id, class_from_id(static_cast<int>(rng() % kNumClasses))));
  }
  return s;
}

}  // namespace

TEST_CASE("pass-through stub accepts everything with weight one") {
  std::map<std::string, Eigen::RowVectorXd> rows;
  std::vector<LabeledImage> cands;
  for (int i = 0; i < 7; ++i) {
    const std::string id = std::to_string(i);
    rows[id] = peaked(i, 1.0);
    cands.push_back(candidate(id, class_from_id(i)));
  }
  const auto [accepted, report] = qa_filter(LookupClassifier(rows), cands, {});
  CHECK(accepted.size() == 7);
  for (const auto& s : accepted) CHECK(s.weight == 1.0);
  CHECK(report.rejected() == 0);
}

TEST_CASE("a stub that always says class 0 rejects class 3 candidates") {
  std::map<std::string, Eigen::RowVectorXd> rows;
  std::vector<LabeledImage> cands;
  for (int i = 0; i < 5; ++i) {
    rows[std::to_string(i)] = peaked(0, 0.9);
    cands.push_back(candidate(std::to_string(i), EmotionClass::sadness));
  }
  const auto [accepted, report] = qa_filter(LookupClassifier(rows), cands, {});
  CHECK(accepted.empty());
  CHECK(report.classes[3].rejected == 5);
  CHECK(report.classes[3].rejected_ids.size() == 5);
  CHECK(report.fully_rejected() == std::vector<EmotionClass>{EmotionClass::sadness});
}

TEST_CASE("confidences 0.9 0.4 0.7 at threshold 0.5") {
  std::map<std::string, Eigen::RowVectorXd> rows{
      {"a", peaked(2, 0.9)}, {"b", peaked(2, 0.4)}, {"c", peaked(2, 0.7)}};
  const std::vector<LabeledImage> cands{candidate("a", EmotionClass::happiness),
                                        candidate("b", EmotionClass::happiness),
                                        candidate("c", EmotionClass::happiness)};
  const auto [accepted, report] = qa_filter(LookupClassifier(rows), cands, {0.5, true});
  REQUIRE(accepted.size() == 2);
  CHECK(accepted[0].weight == doctest::Approx(0.9));
  CHECK(accepted[1].weight == doctest::Approx(0.7));
  CHECK(report.classes[2].accepted == 2);
  CHECK(report.classes[2].rejected == 1);
  CHECK(report.classes[2].rejected_ids == std::vector<std::string>{"b"});
  CHECK(report.classes[2].mean_accepted_confidence == doctest::Approx(0.8));
}

TEST_CASE("filter equals the brute-force rule on random candidates") {
  const Scenario s = random_scenario(1000, 5);
  const LookupClassifier stub(s.rows);
  for (double threshold : {0.0, 0.2, 0.45, 0.7}) {
    const auto [accepted, report] = qa_filter(stub, s.candidates, {threshold, true});
    std::map<std::string, double> expected;
    for (const auto& c : s.candidates) {
      const Eigen::RowVectorXd& row = s.rows.at(c.source_id);
      const std::vector<double> probs(row.data(), row.data() + row.size());
      if (oracle::qa_rule(probs, class_id(c.label), threshold)) expected[c.source_id] = row(class_id(c.label));
    }
    std::map<std::string, double> got;
    for (const auto& a : accepted) got[a.image.source_id] = a.weight;
    REQUIRE(got.size() == expected.size());
    for (const auto& [id, w] : expected) {
      REQUIRE(got.count(id) == 1);
      CHECK(std::abs(got[id] - w) <= 1e-9);
    }
    CHECK(report.accepted() + report.rejected() == 1000);
    for (const auto& cls : report.classes) CHECK(cls.accepted + cls.rejected == cls.generated());
  }
}

TEST_CASE("acceptance is monotone in the threshold") {
  const Scenario s = random_scenario(1000, 6);
  const LookupClassifier stub(s.rows);
  std::set<std::string> previous;
  for (int k = 0; k < 10; ++k) {
    const double t = 0.1 * k;
    std::set<std::string> now;
    for (const auto& a : qa_filter(stub, s.candidates, {t, true}).first) {
      now.insert(a.image.source_id);
      CHECK(a.weight >= t);
      CHECK(a.weight >= 1.0 / 7.0);
    }
    if (k > 0)
      for (const auto& id : now) CHECK(previous.count(id) == 1);
    previous = now;
  }
}

TEST_CASE("threshold zero accepts exactly the argmax-correct set") {
  const Scenario s = random_scenario(300, 7);
  const auto accepted = qa_filter(LookupClassifier(s.rows), s.candidates, {}).first;
  std::set<std::string> got;
  for (const auto& a : accepted) got.insert(a.image.source_id);
  for (const auto& c : s.candidates) {
    const Eigen::RowVectorXd& row = s.rows.at(c.source_id);
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j)
      if (row(j) > row(best)) best = j;
    CHECK((got.count(c.source_id) == 1) == (best == class_id(c.label)));
  }
}

TEST_CASE("qa edge cases") {
  const auto [none, report] = qa_filter(LookupClassifier({}), {}, {});
  CHECK(none.empty());
  CHECK(report.accepted() == 0);
  CHECK(report.rejected() == 0);

  std::map<std::string, Eigen::RowVectorXd> rows{{"x", Eigen::RowVectorXd::Constant(3, 1.0 / 3)}};
  CHECK_THROWS_AS((void)qa_filter(LookupClassifier(rows, 3), {candidate("x", EmotionClass::fear)}, {}),
                  ValidationError);
  CHECK_THROWS_AS(QaConfig({1.0, true}).validate(), ValidationError);
  CHECK_THROWS_AS(QaConfig({-0.1, true}).validate(), ValidationError);
}

TEST_CASE("report json round trip") {
  const Scenario s = random_scenario(50, 8);
  const QaReport r = qa_filter(LookupClassifier(s.rows), s.candidates, {0.3, true}).second;
  const QaReport back = QaReport::from_json(r.to_json());
  for (int c = 0; c < kNumClasses; ++c) {
    CHECK(back.classes[c].accepted == r.classes[c].accepted);
    CHECK(back.classes[c].rejected_ids == r.classes[c].rejected_ids);
    CHECK(back.classes[c].mean_accepted_confidence == doctest::Approx(r.classes[c].mean_accepted_confidence));
  }
}

TEST_CASE("strip_weights resets weights and keeps images") {
  std::vector<WeightedSample> v{{candidate("a", EmotionClass::fear), 0.9}, {candidate("b", EmotionClass::anger), 0.7}};
  const auto out = strip_weights(v);
  REQUIRE(out.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(out[i].weight == 1.0);
    CHECK(out[i].image.pixels == v[i].image.pixels);
    CHECK(out[i].image.source_id == v[i].image.source_id);
  }
  CHECK(strip_weights({}).empty());
}
