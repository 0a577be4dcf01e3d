#pragma once

#include "ecgr/data.hpp"
#include "ecgr/models.hpp"
#include "ecgr/strategy.hpp"

#include "json.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace ecgr {

using ClassScores = std::array<double, kNumClasses>;

struct StepMetrics {
  std::string dataset;
  double accuracy = 0.0;
  ClassScores f1{};
  int support = 0;
};

/// One continual run. steps[k] holds one entry per dataset seen by step k;
/// step 0 is the source classifier on the source test split.
struct ContinualRunResult {
  Strategy strategy = Strategy::current_model;
  std::uint64_t seed = 0;
  int replication = 0;
  std::vector<std::string> sequence;  // dataset names in order
  std::vector<std::vector<StepMetrics>> steps;
  std::vector<std::size_t> training_set_sizes;  // per adaptation step, 0 when nothing was trained
  std::string error;                            // non-empty when the run failed

  [[nodiscard]] bool failed() const { return !error.empty(); }
  /// Throws unless step k has exactly k + 1 entries in sequence order.
  void check_shape() const;
};

struct Cell {
  double mean = 0.0;
  double std = 0.0;
};

struct AggregateStep {
  std::vector<std::string> datasets;
  std::vector<Cell> accuracy;              // one per dataset
  std::vector<std::array<Cell, kNumClasses>> f1;  // one per dataset
  Cell mean_all;       // per-replication mean over all datasets, aggregated
  Cell mean_previous;  // same over every dataset but the newest; step >= 1
};

struct AggregateResult {
  Strategy strategy = Strategy::current_model;
  std::vector<std::string> sequence;
  std::vector<AggregateStep> steps;
  int replications = 0;
  int failures = 0;
};

[[nodiscard]] double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// (true x predicted) counts.
[[nodiscard]] Eigen::MatrixXi confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& labels,
                                               int num_classes = kNumClasses);

/// One-vs-rest F1 per class; 0 when precision + recall is 0.
[[nodiscard]] ClassScores per_class_f1(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Full-precision arithmetic mean. Round with format_cell for tables.
[[nodiscard]] double mean_over_datasets(const std::vector<double>& accuracies);

/// Two-decimal rendering used by every emitted table.
[[nodiscard]] std::string format_cell(double value);
[[nodiscard]] std::string format_cell(const Cell& cell);

[[nodiscard]] StepMetrics evaluate_classifier(const ImageClassifier& classifier, const Dataset& test_set);

/// Per-cell mean and population standard deviation over the successful
/// replications. Failed replications are counted, not averaged.
[[nodiscard]] AggregateResult aggregate_replications(const std::vector<ContinualRunResult>& results);

enum class ReportFormat { csv, json, markdown, plot_data };

/// One table row: a dataset, or a mean row.
struct TableRow {
  std::string name;
  std::vector<Cell> cells;  // one per strategy column
};

struct Table {
  int step = 0;
  std::vector<std::string> columns;
  std::vector<TableRow> rows;
};

/// Table after adaptation step `step`: one row per dataset seen so far, then
/// "Mean" over all of them when there are two datasets, or "Mean" over the
/// previously seen datasets plus "Updated mean" over all of them otherwise.
[[nodiscard]] Table build_table(const std::vector<AggregateResult>& aggregates, int step);

[[nodiscard]] std::string table_csv(const Table& t);
[[nodiscard]] nlohmann::json table_json(const Table& t);
[[nodiscard]] std::string table_markdown(const Table& t);
[[nodiscard]] Table table_from_json(const nlohmann::json& j);
[[nodiscard]] Table table_from_csv(const std::string& csv);

/// Source-dataset accuracy per strategy over [Baseline, step names].
[[nodiscard]] std::string plotdata_source_accuracy(const std::vector<AggregateResult>& aggregates);
/// Accuracy of each intermediate dataset from the step it is learned on.
[[nodiscard]] std::string plotdata_intermediate_accuracy(const std::vector<AggregateResult>& aggregates);
/// Per-class F1 on the source dataset per strategy and step.
[[nodiscard]] std::string plotdata_source_f1(const std::vector<AggregateResult>& aggregates);

/// Writes metrics/table_<step>.{csv,json,md} and metrics/plotdata_<figure>.csv
/// under `metrics_dir` for the requested formats. Returns the written paths.
std::vector<std::filesystem::path> emit_report(const std::vector<AggregateResult>& aggregates,
                                               const std::vector<ReportFormat>& formats,
                                               const std::filesystem::path& metrics_dir);

[[nodiscard]] nlohmann::json to_json(const ContinualRunResult& r);
[[nodiscard]] ContinualRunResult run_result_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const AggregateResult& a);
[[nodiscard]] AggregateResult aggregate_from_json(const nlohmann::json& j);

}  // namespace ecgr
