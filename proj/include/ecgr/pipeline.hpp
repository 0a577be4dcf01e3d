#pragma once

#include "ecgr/data.hpp"
#include "ecgr/eval.hpp"
#include "ecgr/gan.hpp"
#include "ecgr/models.hpp"
#include "ecgr/qa.hpp"
#include "ecgr/strategy.hpp"
#include "ecgr/training.hpp"

#include "json.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ecgr {

/// Where a dataset comes from: an image tree, or a procedural toy domain.
struct DatasetSource {
  std::string name;
  std::filesystem::path root;
  std::optional<int> toy_domain;
  int toy_per_class = 100;
};

struct PipelinePlan {
  std::string run_id = "run";
  std::vector<DatasetSource> datasets;  // sequence order, source first
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  int image_size = 48;
  double test_fraction = 0.2;
  ClassifierArch classifier{};
  TrainConfig train{};   // offline classifiers
  TrainConfig adapt{};   // continual steps; scope and seed are set per step
  GanConfig gan{};
  QaConfig qa{};
  int synthetic_per_class = 0;  // 0: the source dataset's largest per-class training count
  int replications = 1;
  std::uint64_t base_seed = 0;

  void validate() const;
};

[[nodiscard]] nlohmann::json plan_to_json(const PipelinePlan& plan);
[[nodiscard]] PipelinePlan plan_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
/// Reads a YAML plan; relative dataset roots resolve against the file's directory.
[[nodiscard]] PipelinePlan load_plan(const std::filesystem::path& path);
[[nodiscard]] PipelinePlan parse_plan_yaml(const std::string& text, const std::filesystem::path& base_dir = {});

struct PreparedDataset {
  std::string name;
  Dataset train;
  Dataset test;
};

/// Loads (or renders) every dataset of the plan and splits it.
[[nodiscard]] std::vector<PreparedDataset> prepare_datasets(const PipelinePlan& plan);
[[nodiscard]] PreparedDataset prepare_dataset(const PipelinePlan& plan, std::size_t index);

/// Samples one generator produced for one class, with provenance.
struct SyntheticClassSet {
  EmotionClass label = EmotionClass::fear;
  std::string generator_id;
  std::uint64_t seed = 0;
  int replication = 0;
  std::vector<LabeledImage> candidates;   // raw generator output
  std::vector<WeightedSample> accepted;   // QA survivors, weighted by confidence
};

struct SyntheticEntry {
  std::string dataset;
  int replication = 0;
  std::vector<SyntheticClassSet> classes;  // one per class, in class-id order
  QaReport report;

  /// Raw candidates, weight 1.
  [[nodiscard]] Dataset raw() const;
  /// QA-accepted samples with their confidence weights.
  [[nodiscard]] Dataset accepted() const;
  /// CSV source_id,class_id,weight,split over accepted samples, followed by
  /// one digest line per class over the candidate pixels.
  [[nodiscard]] std::string manifest() const;
};

/// T' of the offline stage: synthetic sets keyed by source dataset name.
struct SyntheticCollection {
  std::map<std::string, SyntheticEntry> entries;

  [[nodiscard]] const SyntheticEntry& at(const std::string& dataset) const;
  [[nodiscard]] bool contains(const std::string& dataset) const { return entries.count(dataset) > 0; }
};

using ClassifierTrainer =
    std::function<std::shared_ptr<const ImageClassifier>(const Dataset& train, std::uint64_t seed)>;
using GeneratorTrainer = std::function<std::shared_ptr<const ImageGenerator>(
    const std::string& dataset, EmotionClass label, const std::vector<LabeledImage>& samples, std::uint64_t seed)>;

/// Replaceable training steps of the offline stage.
struct OfflineHooks {
  ClassifierTrainer train_classifier;
  GeneratorTrainer train_generator;
  int jobs = 1;                                // concurrent per-class GAN trainings
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

/// Default hooks: build_classifier + train_classifier, and WGAN-GP per class.
[[nodiscard]] OfflineHooks default_offline_hooks(const PipelinePlan& plan);

struct OfflineModels {
  std::map<std::string, std::shared_ptr<const ImageClassifier>> classifiers;
  std::map<std::string, std::vector<std::shared_ptr<const ImageGenerator>>> generators;  // class-id order
  std::map<std::string, std::string> failures;  // dataset -> diagnostic
};

/// Trains C_{d_t} and one generator per class for every given dataset. A
/// failure aborts only that dataset's entry.
[[nodiscard]] OfflineModels train_offline_models(const std::vector<const Dataset*>& datasets, const PipelinePlan& plan,
                                                 const OfflineHooks& hooks);

/// Generates candidates with every trained generator and filters them
/// through the classifier of the generator's own dataset. Generation seeds
/// derive from (base_seed + replication, dataset, class).
[[nodiscard]] SyntheticCollection synthesize_collection(const OfflineModels& models, const PipelinePlan& plan,
                                                        int synthetic_per_class, int replication, int jobs = 1);

struct OfflineResult {
  OfflineModels models;
  SyntheticCollection collection;
};

/// Both halves of the offline stage for replication 0.
[[nodiscard]] OfflineResult run_offline_stage(const std::vector<const Dataset*>& datasets, const PipelinePlan& plan,
                                              const OfflineHooks& hooks);

/// Largest per-class count of a training set.
[[nodiscard]] int largest_class_count(const Dataset& ds);

/// The training set of adaptation step `step` (1-based position of the
/// target in `sequence`) for a strategy. Empty for current_model.
[[nodiscard]] Dataset build_training_set(Strategy strategy, const std::vector<PreparedDataset>& sequence,
                                         std::size_t step, const SyntheticCollection& collection);

/// Adapts `source` along the sequence; evaluates every seen test split after
/// each step. `seed` drives training order; pass base_seed + replication.
[[nodiscard]] ContinualRunResult run_continual_stage(const ClassifierModel& source,
                                                     const std::vector<PreparedDataset>& sequence,
                                                     const SyntheticCollection& collection, Strategy strategy,
                                                     const PipelinePlan& plan, std::uint64_t seed,
                                                     int replication = 0);

/// Runs `run(replication, seed)` with seed = base_seed + replication. A
/// throwing replication yields a failed result; the others still run.
[[nodiscard]] std::vector<ContinualRunResult> replicate(
    const std::function<ContinualRunResult(int replication, std::uint64_t seed)>& run, int replications,
    std::uint64_t base_seed, int jobs = 1);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// is rethrown after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ecgr
