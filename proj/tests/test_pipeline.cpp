#include "doctest.h"
#include "test_util.hpp"

#include "ecgr/io.hpp"
#include "ecgr/pipeline.hpp"

#include <atomic>
#include <set>

using namespace ecgr;

namespace {

// Images whose constant intensity encodes the class, plus one pixel that
// depends on the seed so that different seeds give different samples.
class StubGenerator final : public ImageGenerator {
 public:
  StubGenerator(EmotionClass c, std::string id) : c_(c), id_(std::move(id)) {}
  EmotionClass class_tag() const override { return c_; }
  std::string id() const override { return id_; }
  std::vector<LabeledImage> generate(int n, std::uint64_t seed) const override {
    std::vector<LabeledImage> out;
    for (int i = 0; i < n; ++i) {
      Image img = Image::Constant(32, 32, static_cast<float>(class_id(c_)) / 10.0f);
      img(31, 31) = static_cast<float>((seed * 31 + static_cast<std::uint64_t>(i)) % 97) / 97.0f;
      out.push_back({img, c_, id_ + "/" + std::to_string(seed) + "/" + std::to_string(i)});
    }
    return out;
  }

 private:
  EmotionClass c_;
  std::string id_;
};

// Reads the class back from the intensity; always certain.
class StubClassifier final : public ImageClassifier {
 public:
  int num_classes() const override { return kNumClasses; }
  int image_size() const override { return 32; }
  Eigen::MatrixXd predict_proba(const std::vector<LabeledImage>& images) const override {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(images.size()), kNumClasses);
    for (std::size_t i = 0; i < images.size(); ++i)
      p(static_cast<Eigen::Index>(i), std::lround(images[i].pixels(0, 0) * 10.0f)) = 1.0;
    return p;
  }
};

OfflineHooks stub_hooks() {
  OfflineHooks hooks;
  hooks.train_classifier = [](const Dataset&, std::uint64_t) { return std::make_shared<StubClassifier>(); };
  hooks.train_generator = [](const std::string& ds, EmotionClass c, const std::vector<LabeledImage>&,
                             std::uint64_t seed) {
    return std::make_shared<StubGenerator>(c, ds + "-" + std::string(class_name(c)) + "-" + std::to_string(seed % 1000));
  };
  return hooks;
}

PipelinePlan tiny_plan(int datasets) {
  PipelinePlan plan;
  for (int d = 0; d < datasets; ++d) plan.datasets.push_back({"d" + std::to_string(d), {}, d % 4, 5});
  plan.image_size = 32;
  plan.classifier.block_filters = {4, 8};
  plan.classifier.convs_per_block = 1;
  plan.classifier.dense_units = {16};
  plan.train.epochs = 2;
  plan.train.batch_size = 16;
  plan.train.patience = 0;
  plan.adapt = plan.train;
  plan.adapt.epochs = 1;
  plan.synthetic_per_class = 3;
  plan.base_seed = 7;
  return plan;
}

std::vector<PreparedDataset> random_sequence(int n) {
  std::vector<PreparedDataset> seq;
  for (int d = 0; d < n; ++d) {
    const std::string name = "d" + std::to_string(d);
    auto [train, test] = split_dataset(testutil::random_dataset(name, 5 + d, 32, static_cast<std::uint64_t>(d)), 0.2, 1);
    seq.push_back({name, train, test});
  }
  return seq;
}

std::string manifests(const SyntheticCollection& c) {
  std::string out;
  for (const auto& [name, e] : c.entries) out += name + "\n" + e.manifest();
  return out;
}

std::string strip_weight_column(const std::string& csv) {
  std::string out;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.size() == 4) f[2].clear();
    for (const auto& x : f) out += x + ",";
    out += "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("stub offline stage yields exactly 7 x n unit-weight samples per entry") {
  const PipelinePlan plan = tiny_plan(3);
  const auto a = testutil::random_dataset("a", 4, 32, 1);
  const auto b = testutil::random_dataset("b", 4, 32, 2);
  const OfflineResult res = run_offline_stage({&a, &b}, plan, stub_hooks());
  REQUIRE(res.collection.entries.size() == 2);
  for (const auto& [name, entry] : res.collection.entries) {
    CHECK(entry.accepted().size() == 7 * 3);
    CHECK(entry.raw().size() == 7 * 3);
    for (const auto& s : entry.accepted().samples) CHECK(s.weight == 1.0);
    CHECK(entry.report.accepted() == 21);
    CHECK(entry.classes.size() == 7);
  }
  CHECK(res.models.classifiers.size() == 2);
  CHECK(res.models.failures.empty());
}

TEST_CASE("synthetic manifests are reproducible and change with the replication") {
  const PipelinePlan plan = tiny_plan(3);
  const auto a = testutil::random_dataset("a", 4, 32, 1);
  const auto r1 = run_offline_stage({&a}, plan, stub_hooks());
  const auto r2 = run_offline_stage({&a}, plan, stub_hooks());
  CHECK(io::sha256_hex(manifests(r1.collection)) == io::sha256_hex(manifests(r2.collection)));

  const auto rep1 = synthesize_collection(r1.models, plan, 3, 1);
  const auto rep2 = synthesize_collection(r1.models, plan, 3, 2);
  CHECK(manifests(rep1) != manifests(r1.collection));
  CHECK(manifests(rep1) != manifests(rep2));
  CHECK(manifests(synthesize_collection(r1.models, plan, 3, 0)) == manifests(r1.collection));
}

TEST_CASE("a failing dataset does not take down the others") {
  const PipelinePlan plan = tiny_plan(3);
  OfflineHooks hooks = stub_hooks();
  hooks.train_generator = [](const std::string& ds, EmotionClass c, const std::vector<LabeledImage>&,
                             std::uint64_t) -> std::shared_ptr<const ImageGenerator> {
    if (ds == "bad") throw DivergenceError("boom", "");
    return std::make_shared<StubGenerator>(c, ds);
  };
  const auto good = testutil::random_dataset("good", 3, 32, 1);
  const auto bad = testutil::random_dataset("bad", 3, 32, 2);
  const auto res = run_offline_stage({&good, &bad}, plan, hooks);
  CHECK(res.collection.contains("good"));
  CHECK_FALSE(res.collection.contains("bad"));
  REQUIRE(res.models.failures.count("bad") == 1);
  CHECK(res.models.failures.at("bad").find("boom") != std::string::npos);
  CHECK_THROWS_WITH_AS((void)res.collection.at("bad"), doctest::Contains("bad"), ValidationError);
}

TEST_CASE("real offline stage on two tiny datasets stays within the accounting bound") {
  PipelinePlan plan = tiny_plan(3);
  plan.gan.epochs = 1;
  plan.gan.batch_size = 2;
  plan.gan.noise_dim = 8;
  plan.gan.generator.base_filters = 4;
  plan.gan.generator.up_filters = {4, 2};
  plan.gan.critic.filters = {4, 4};
  plan.gan.critic.strides = {2, 2};
  const auto a = testutil::random_dataset("a", 4, 32, 1);
  const auto b = testutil::random_dataset("b", 4, 32, 2);
  const auto res = run_offline_stage({&a, &b}, plan, default_offline_hooks(plan));
  REQUIRE(res.collection.entries.size() == 2);
  for (const auto& [name, e] : res.collection.entries) {
    CHECK(e.accepted().size() <= 21);
    CHECK(e.report.accepted() + e.report.rejected() == 21);
    for (const auto& s : e.accepted().samples) {
      CHECK(s.weight > 0.0);
      CHECK(s.weight <= 1.0);
    }
  }
}

TEST_CASE("training sets per strategy") {
  const auto seq = random_sequence(3);
  const PipelinePlan plan = tiny_plan(3);
  const auto a = seq[0].train;
  const auto b = seq[1].train;
  SyntheticCollection col = run_offline_stage({&a, &b}, plan, stub_hooks()).collection;
  // Give the accepted samples non-unit weights to tell the variants apart.
  for (auto& [name, e] : col.entries)
    for (auto& cls : e.classes)
      for (std::size_t i = 0; i < cls.accepted.size(); ++i) cls.accepted[i].weight = 0.5 + 0.1 * static_cast<double>(i);

  CHECK(build_training_set(Strategy::current_model, seq, 1, col).empty());
  CHECK(build_training_set(Strategy::fine_tune, seq, 2, col).size() == seq[2].train.size());
  CHECK(build_training_set(Strategy::joint, seq, 1, col).size() == seq[0].train.size() + seq[1].train.size());
  CHECK(build_training_set(Strategy::joint, seq, 2, col).size() ==
        seq[0].train.size() + seq[1].train.size() + seq[2].train.size());
  CHECK(build_training_set(Strategy::ecgr, seq, 2, col).size() == seq[2].train.size() + 2 * 21);

  const Dataset qa = build_training_set(Strategy::ecgr_qa, seq, 2, col);
  const Dataset wqa = build_training_set(Strategy::ecgr_wqa, seq, 2, col);
  CHECK(manifest_csv(qa) != manifest_csv(wqa));
  CHECK(strip_weight_column(manifest_csv(qa)) == strip_weight_column(manifest_csv(wqa)));
  for (const auto& s : qa.samples) CHECK(s.weight == 1.0);
  bool weighted = false;
  for (const auto& s : wqa.samples) weighted = weighted || s.weight < 1.0;
  CHECK(weighted);

  // Every earlier dataset contributes every class.
  std::array<int, kNumClasses> synthetic{};
  for (const auto& s : wqa.samples)
    if (s.image.source_id.rfind("d2/", 0) != 0) ++synthetic[static_cast<std::size_t>(class_id(s.image.label))];
  for (int n : synthetic) CHECK(n == 6);
}

TEST_CASE("continual stage by strategy") {
  const auto seq = random_sequence(3);
  const PipelinePlan plan = tiny_plan(3);
  TrainConfig cfg = plan.train;
  const auto source = train_classifier(build_classifier(7, 32, plan.classifier, 1), seq[0].train, cfg).first;
  const auto a = seq[0].train;
  const auto b = seq[1].train;
  const SyntheticCollection col = run_offline_stage({&a, &b}, plan, stub_hooks()).collection;

  const StepMetrics baseline = evaluate_classifier(source, seq[0].test);
  const auto current = run_continual_stage(source, seq, col, Strategy::current_model, plan, 7);
  CHECK_NOTHROW(current.check_shape());
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(current.steps[k].size() == k + 1);
    CHECK(current.steps[k][0].accuracy == baseline.accuracy);
    for (std::size_t d = 0; d <= k; ++d)
      CHECK(current.steps[k][d].accuracy == evaluate_classifier(source, seq[d].test).accuracy);
  }

  const auto joint = run_continual_stage(source, seq, col, Strategy::joint, plan, 7);
  CHECK(joint.training_set_sizes == std::vector<std::size_t>{seq[0].train.size() + seq[1].train.size(),
                                                             seq[0].train.size() + seq[1].train.size() +
                                                                 seq[2].train.size()});

  // fine_tune never looks at the collection.
  const auto ft = run_continual_stage(source, seq, SyntheticCollection{}, Strategy::fine_tune, plan, 7);
  CHECK_NOTHROW(ft.check_shape());

  CHECK_THROWS_WITH_AS((void)run_continual_stage(source, seq, SyntheticCollection{}, Strategy::ecgr_qa, plan, 7),
                       doctest::Contains("d0"), ValidationError);

  const auto again = run_continual_stage(source, seq, col, Strategy::ecgr_wqa, plan, 7);
  const auto again2 = run_continual_stage(source, seq, col, Strategy::ecgr_wqa, plan, 7);
  CHECK(nlohmann::json(to_json(again)).dump() == nlohmann::json(to_json(again2)).dump());
}

TEST_CASE("replicate seeds, failures and identity") {
  std::vector<std::uint64_t> seen;
  std::mutex m;
  const auto results = replicate(
      [&](int r, std::uint64_t seed) {
        {
          std::lock_guard lock(m);
          seen.push_back(seed);
        }
        if (r == 1) throw std::runtime_error("replication broke");
        ContinualRunResult out;
        out.seed = seed;
        out.replication = r;
        return out;
      },
      3, 100, 2);
  REQUIRE(results.size() == 3);
  CHECK(results[0].seed == 100);
  CHECK(results[2].seed == 102);
  CHECK(results[1].failed());
  CHECK(results[1].error == "replication broke");
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<std::uint64_t>{100, 101, 102});

  const auto single = replicate([](int, std::uint64_t seed) { ContinualRunResult r; r.seed = seed; return r; }, 1, 9);
  CHECK(single.size() == 1);
  CHECK(single[0].seed == 9);
  CHECK_THROWS_AS((void)replicate([](int, std::uint64_t) { return ContinualRunResult{}; }, 0, 1), ValidationError);
}

TEST_CASE("parallel_for visits every index and rethrows") {
  std::atomic<int> sum{0};
  parallel_for(100, 4, [&](std::size_t i) { sum += static_cast<int>(i); });
  CHECK(sum == 4950);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 5) throw ValidationError("five");
                  }),
                  ValidationError);
}

TEST_CASE("plan yaml parsing and validation") {
  const std::string yaml = R"(
run_id: toy
image_size: 32
replications: 3
base_seed: 11
datasets:
  - name: outline
    toy: 0
    per_class: 10
  - name: real
    root: data/real
strategies: [fine_tune, ecgr_qa]
train:
  epochs: 5
  batch_size: 16
gan:
  epochs: 2
  learning_rate: 0.0002
qa:
  confidence_threshold: 0.25
)";
  testutil::TempDir dir("plan");
  std::filesystem::create_directories(dir.path() / "data" / "real");
  const PipelinePlan plan = parse_plan_yaml(yaml, dir.path());
  CHECK(plan.run_id == "toy");
  CHECK(plan.replications == 3);
  CHECK(plan.base_seed == 11);
  REQUIRE(plan.datasets.size() == 2);
  CHECK(plan.datasets[0].toy_domain == 0);
  CHECK(plan.datasets[1].root == dir.path() / "data" / "real");
  CHECK(plan.strategies == std::vector<Strategy>{Strategy::fine_tune, Strategy::ecgr_qa});
  CHECK(plan.train.epochs == 5);
  CHECK(plan.adapt.epochs == 5);
  CHECK(plan.gan.optimizer.learning_rate == doctest::Approx(2e-4));
  CHECK(plan.gan.n_critic == 5);
  CHECK(plan.qa.confidence_threshold == doctest::Approx(0.25));

  const PipelinePlan back = plan_from_json(plan_to_json(plan));
  CHECK(plan_to_json(back) == plan_to_json(plan));

  CHECK_THROWS_AS((void)parse_plan_yaml("run_id: x\nbogus: 1\n"), ValidationError);
  CHECK_THROWS_AS((void)parse_plan_yaml("datasets:\n  - name: only\n    toy: 0\n"), ValidationError);
  CHECK_THROWS_AS((void)parse_plan_yaml(": : :\n"), ValidationError);
}

TEST_CASE("toy domains prepare into stratified splits") {
  PipelinePlan plan = tiny_plan(2);
  const auto seq = prepare_datasets(plan);
  REQUIRE(seq.size() == 2);
  for (const auto& d : seq) {
    CHECK(d.train.size() + d.test.size() == 35);
    for (int n : d.test.class_counts()) CHECK(n == 1);
  }
  const auto again = prepare_datasets(plan);
  CHECK(manifest_csv(seq[1].test) == manifest_csv(again[1].test));
  CHECK(seq[0].train.samples[0].image.pixels == again[0].train.samples[0].image.pixels);
}
