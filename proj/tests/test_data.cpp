#include "doctest.h"
#include "test_util.hpp"

#include "ecgr/data.hpp"

#include <map>
#include <set>

using namespace ecgr;

TEST_CASE("class ids are fixed") {
  CHECK(class_id(EmotionClass::fear) == 0);
  CHECK(class_id(EmotionClass::neutral) == 6);
  CHECK(class_name(EmotionClass::happiness) == "happiness");
  CHECK(class_from_name("surprise") == EmotionClass::surprise);
  CHECK_FALSE(class_from_name("contempt").has_value());
  CHECK_THROWS_AS((void)class_from_id(7), ValidationError);
}

TEST_CASE("loader reads a 7 x 10 tree at 48px") {
  testutil::TempDir dir("load");
  testutil::write_image_tree(dir.path(), 10, 64, 1);
  const Dataset ds = load_image_dataset(dir.path(), 48, "tree");
  CHECK(ds.size() == 70);
  for (const auto& s : ds.samples) {
    CHECK(s.image.pixels.rows() == 48);
    CHECK(s.image.pixels.cols() == 48);
    CHECK(s.weight == 1.0);
    CHECK(s.image.pixels.minCoeff() >= 0.0f);
    CHECK(s.image.pixels.maxCoeff() <= 1.0f);
  }
  for (int n : ds.class_counts()) CHECK(n == 10);
  CHECK_NOTHROW(validate_dataset(ds));
}

TEST_CASE("loader is deterministic") {
  testutil::TempDir dir("load2");
  testutil::write_image_tree(dir.path(), 4, 20, 2);
  const Dataset a = load_image_dataset(dir.path(), 16, "t");
  const Dataset b = load_image_dataset(dir.path(), 16, "t");
  CHECK(manifest_csv(a) == manifest_csv(b));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.samples[i].image.pixels == b.samples[i].image.pixels);
  // Sorted by path within each class.
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a.samples[i].image.label == a.samples[i - 1].image.label)
      CHECK(a.samples[i - 1].image.source_id < a.samples[i].image.source_id);
}

TEST_CASE("loader reports missing classes, empty classes and unreadable files") {
  testutil::TempDir dir("bad");
  testutil::write_image_tree(dir.path(), 2, 8, 3, {"neutral"});
  CHECK_THROWS_WITH_AS((void)load_image_dataset(dir.path(), 8, "x"), "missing classes: neutral", ValidationError);

  std::filesystem::create_directories(dir.path() / "neutral");
  CHECK_THROWS_WITH_AS((void)load_image_dataset(dir.path(), 8, "x"), doctest::Contains("no images"), ValidationError);

  io::write_file_atomic(dir.path() / "neutral" / "broken.png", "not an image");
  CHECK_THROWS_WITH_AS((void)load_image_dataset(dir.path(), 8, "x"), doctest::Contains("broken.png"),
                       ValidationError);
  CHECK_THROWS_AS((void)load_image_dataset(dir.path() / "nope", 8, "x"), ValidationError);
}

TEST_CASE("stratified split arithmetic") {
  const Dataset ds = testutil::random_dataset("d", 10, 4, 1);
  const auto [train, test] = split_dataset(ds, 0.2, 1);
  CHECK(train.size() == 56);
  CHECK(test.size() == 14);
  for (int n : test.class_counts()) CHECK(n == 2);
  CHECK(train.split == Split::train);
  CHECK(test.split == Split::test);

  std::set<std::string> ids;
  for (const auto& s : train.samples) ids.insert(s.image.source_id);
  for (const auto& s : test.samples) CHECK(ids.count(s.image.source_id) == 0);
}

TEST_CASE("split is deterministic per seed and varies across seeds") {
  const Dataset ds = testutil::random_dataset("d", 10, 4, 1);
  const auto a = split_dataset(ds, 0.2, 5);
  const auto b = split_dataset(ds, 0.2, 5);
  CHECK(manifest_csv(a.second) == manifest_csv(b.second));

  std::set<std::string> memberships;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [train, test] = split_dataset(ds, 0.2, seed);
    CHECK(test.class_counts() == a.second.class_counts());
    memberships.insert(manifest_csv(test));
  }
  CHECK(memberships.size() > 1);
}

TEST_CASE("split keeps class proportions within one sample") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Dataset ds;
    ds.name = "p";
    ds.image_size = 2;
    std::array<int, kNumClasses> n{};
    for (int c = 0; c < kNumClasses; ++c) {
      n[static_cast<std::size_t>(c)] = 2 + static_cast<int>(rng() % 30);
      for (int i = 0; i < n[static_cast<std::size_t>(c)]; ++i)
        ds.samples.push_back({{Image::Zero(2, 2), class_from_id(c), std::to_string(c) + "/" + std::to_string(i)}, 1.0});
    }
    const double f = 0.1 + 0.8 * static_cast<double>(rng() % 100) / 100.0;
    const auto [train, test] = split_dataset(ds, f, rng());
    for (int c = 0; c < kNumClasses; ++c) {
      const double expected = n[static_cast<std::size_t>(c)] * f;
      CHECK(std::abs(test.class_counts()[static_cast<std::size_t>(c)] - expected) <= 1.0);
    }
  }
}

TEST_CASE("split rejects singleton classes and bad fractions") {
  Dataset ds = testutil::random_dataset("d", 2, 4, 1);
  ds.samples.pop_back();
  CHECK_THROWS_AS((void)split_dataset(ds, 0.2, 1), ValidationError);
  CHECK_THROWS_AS((void)split_dataset(testutil::random_dataset("d", 2, 4, 1), 1.0, 1), ValidationError);
}

TEST_CASE("unify concatenates and keeps weights") {
  Dataset target = testutil::random_dataset("t", 14, 4, 1);
  target.samples.resize(100);
  Dataset synth = testutil::random_dataset("s", 8, 4, 2);
  synth.samples.resize(50);
  for (std::size_t i = 0; i < synth.size(); ++i) synth.samples[i].weight = 0.5 + 0.01 * static_cast<double>(i % 50);
  const Dataset target_copy = target;

  const Dataset u = unify_datasets(target, synth);
  CHECK(u.size() == 150);
  CHECK(u.name.find('t') != std::string::npos);
  CHECK(u.name.find('s') != std::string::npos);
  std::map<double, int> hist_u, hist_parents;
  for (const auto& s : u.samples) ++hist_u[s.weight];
  for (const auto& s : target.samples) ++hist_parents[s.weight];
  for (const auto& s : synth.samples) ++hist_parents[s.weight];
  CHECK(hist_u == hist_parents);
  CHECK(manifest_csv(target) == manifest_csv(target_copy));

  const Dataset same = unify_datasets(target, Dataset{"empty", Split::train, 4, {}});
  CHECK(same.size() == target.size());
  for (std::size_t i = 0; i < same.size(); ++i) CHECK(same.samples[i].image.pixels == target.samples[i].image.pixels);

  CHECK_THROWS_AS((void)unify_datasets(target, testutil::random_dataset("big", 1, 8, 3)), ValidationError);
}

TEST_CASE("unify is associative up to ordering") {
  const Dataset a = testutil::random_dataset("a", 2, 4, 1);
  const Dataset b = testutil::random_dataset("b", 3, 4, 2);
  const Dataset c = testutil::random_dataset("c", 1, 4, 3);
  const Dataset left = unify_datasets(unify_datasets(a, b), c);
  const Dataset right = unify_datasets(a, unify_datasets(b, c));
  REQUIRE(left.size() == right.size());
  for (std::size_t i = 0; i < left.size(); ++i) CHECK(left.samples[i].image.source_id == right.samples[i].image.source_id);
}

TEST_CASE("gan range maps") {
  Eigen::MatrixXf x(1, 4);
  x << 0.0f, 1.0f, 0.5f, 0.25f;
  const Eigen::MatrixXf g = to_gan_range(x);
  CHECK(g(0, 0) == doctest::Approx(-1.0));
  CHECK(g(0, 1) == doctest::Approx(1.0));
  CHECK(g(0, 2) == doctest::Approx(0.0));
  CHECK(g(0, 3) == doctest::Approx(-0.5));

  const Eigen::MatrixXf r = (Eigen::MatrixXf::Random(30, 30).array() + 1.0f) / 2.0f;
  CHECK((from_gan_range(to_gan_range(r)) - r).cwiseAbs().maxCoeff() < 1e-6f);

  Eigen::MatrixXf bad(1, 1);
  bad << 1.5f;
  CHECK_THROWS_AS((void)to_gan_range(bad), ValidationError);
  CHECK_THROWS_AS((void)from_gan_range(bad), ValidationError);
}

TEST_CASE("manifest columns") {
  Dataset ds = testutil::random_dataset("m", 1, 2, 1);
  ds.split = Split::train;
  ds.samples[0].weight = 0.25;
  const std::string csv = manifest_csv(ds);
  CHECK(csv.rfind("source_id,class_id,weight,split\n", 0) == 0);
  CHECK(csv.find("m/fear/0,0,0.25000000,train\n") != std::string::npos);
}
