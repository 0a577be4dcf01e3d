#include "ecgr/eval.hpp"

#include "ecgr/io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <sstream>

namespace ecgr {

namespace {

void check_lengths(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw ValidationError(
        fmt::format("{} predictions for {} labels", predictions.size(), labels.size()));
}

void check_class(int c, int num_classes) {
  if (c < 0 || c >= num_classes) throw ValidationError(fmt::format("class id {} outside 0..{}", c, num_classes - 1));
}

// Full precision that survives a text round trip.
std::string exact(double v) { return fmt::format("{:.17g}", v); }

Cell mean_std(const std::vector<double>& values) {
  Cell c;
  if (values.empty()) return c;
  double sum = 0.0;
  for (double v : values) sum += v;
  c.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - c.mean) * (v - c.mean);
  c.std = std::sqrt(sq / static_cast<double>(values.size()));
  return c;
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::current_model: return "current_model";
    case Strategy::joint: return "joint";
    case Strategy::fine_tune: return "fine_tune";
    case Strategy::ecgr: return "ecgr";
    case Strategy::ecgr_qa: return "ecgr_qa";
    case Strategy::ecgr_wqa: return "ecgr_wqa";
  }
  return "?";
}

std::string_view strategy_label(Strategy s) {
  switch (s) {
    case Strategy::current_model: return "Current";
    case Strategy::joint: return "Joining";
    case Strategy::fine_tune: return "Fine-Tuning";
    case Strategy::ecgr: return "ECgr";
    case Strategy::ecgr_qa: return "ECgr+QA";
    case Strategy::ecgr_wqa: return "ECgr+wQA";
  }
  return "?";
}

std::optional<Strategy> strategy_from_name(std::string_view name) {
  for (auto s : kAllStrategies)
    if (strategy_name(s) == name) return s;
  return std::nullopt;
}

bool uses_synthetic(Strategy s) {
  return s == Strategy::ecgr || s == Strategy::ecgr_qa || s == Strategy::ecgr_wqa;
}

void ContinualRunResult::check_shape() const {
  if (failed()) return;
  if (steps.size() != sequence.size())
    throw ValidationError(fmt::format("run has {} steps for a sequence of {}", steps.size(), sequence.size()));
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (steps[k].size() != k + 1)
      throw ValidationError(fmt::format("step {} has {} metric entries, expected {}", k, steps[k].size(), k + 1));
    for (std::size_t d = 0; d <= k; ++d)
      if (steps[k][d].dataset != sequence[d])
        throw ValidationError(fmt::format("step {} entry {} is '{}', expected '{}'", k, d, steps[k][d].dataset,
                                          sequence[d]));
  }
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  check_lengths(predictions, labels);
  if (labels.empty()) throw ValidationError("accuracy of an empty prediction set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

Eigen::MatrixXi confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& labels,
                                 int num_classes) {
  check_lengths(predictions, labels);
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_class(labels[i], num_classes);
    check_class(predictions[i], num_classes);
    ++m(labels[i], predictions[i]);
  }
  return m;
}

ClassScores per_class_f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
  const Eigen::MatrixXi m = confusion_matrix(predictions, labels);
  ClassScores f1{};
  for (int c = 0; c < kNumClasses; ++c) {
    const double tp = m(c, c);
    const double predicted = m.col(c).sum();
    const double actual = m.row(c).sum();
    const double p = predicted > 0 ? tp / predicted : 0.0;
    const double r = actual > 0 ? tp / actual : 0.0;
    f1[static_cast<std::size_t>(c)] = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return f1;
}

double mean_over_datasets(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw ValidationError("mean over an empty dataset list");
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  return sum / static_cast<double>(accuracies.size());
}

std::string format_cell(double value) {
  // Half-up at two decimals; the epsilon absorbs binary representation error
  // (0.63 stored as 0.62999...).
  const double scaled = std::floor(value * 100.0 + 0.5 + 1e-9);
  return fmt::format("{:.2f}", scaled / 100.0);
}

std::string format_cell(const Cell& cell) { return format_cell(cell.mean) + "±" + format_cell(cell.std); }

StepMetrics evaluate_classifier(const ImageClassifier& classifier, const Dataset& test_set) {
  if (test_set.empty()) throw ValidationError("test set '" + test_set.name + "' is empty");
  const auto images = test_set.images();
  const Prediction pred = classifier_predict(classifier, images);
  std::vector<int> labels;
  labels.reserve(images.size());
  for (const auto& img : images) labels.push_back(class_id(img.label));
  return {test_set.name, accuracy(pred.labels, labels), per_class_f1(pred.labels, labels),
          static_cast<int>(labels.size())};
}

AggregateResult aggregate_replications(const std::vector<ContinualRunResult>& results) {
  if (results.empty()) throw ValidationError("no replications to aggregate");
  AggregateResult agg;
  const auto first_ok = std::find_if(results.begin(), results.end(), [](const auto& r) { return !r.failed(); });
  const auto& reference = first_ok != results.end() ? *first_ok : results.front();
  agg.strategy = reference.strategy;
  agg.sequence = reference.sequence;
  std::vector<const ContinualRunResult*> ok;
  for (const auto& r : results) {
    if (r.failed()) {
      ++agg.failures;
      continue;
    }
    if (r.strategy != agg.strategy) throw ValidationError("replications mix strategies");
    if (r.sequence != agg.sequence) throw ValidationError("replications use different dataset sequences");
    r.check_shape();
    ok.push_back(&r);
  }
  agg.replications = static_cast<int>(ok.size());
  if (ok.empty()) return agg;

  for (std::size_t k = 0; k < agg.sequence.size(); ++k) {
    AggregateStep step;
    std::vector<double> all_means;
    std::vector<double> previous_means;
    for (const auto* r : ok) {
      std::vector<double> accs;
      for (const auto& m : r->steps[k]) accs.push_back(m.accuracy);
      all_means.push_back(mean_over_datasets(accs));
      if (accs.size() > 1) {
        accs.pop_back();
        previous_means.push_back(mean_over_datasets(accs));
      }
    }
    step.mean_all = mean_std(all_means);
    step.mean_previous = mean_std(previous_means);
    for (std::size_t d = 0; d <= k; ++d) {
      step.datasets.push_back(agg.sequence[d]);
      std::vector<double> accs;
      for (const auto* r : ok) accs.push_back(r->steps[k][d].accuracy);
      step.accuracy.push_back(mean_std(accs));
      std::array<Cell, kNumClasses> f1{};
      for (std::size_t c = 0; c < f1.size(); ++c) {
        std::vector<double> v;
        for (const auto* r : ok) v.push_back(r->steps[k][d].f1[c]);
        f1[c] = mean_std(v);
      }
      step.f1.push_back(f1);
    }
    agg.steps.push_back(std::move(step));
  }
  return agg;
}

Table build_table(const std::vector<AggregateResult>& aggregates, int step) {
  if (aggregates.empty()) throw ValidationError("report needs at least one aggregate");
  const auto& seq = aggregates.front().sequence;
  if (step < 1 || step >= static_cast<int>(seq.size()))
    throw ValidationError(fmt::format("table step {} outside 1..{}", step, seq.size() - 1));
  std::vector<const AggregateResult*> ordered;
  for (auto s : kAllStrategies)
    for (const auto& a : aggregates)
      if (a.strategy == s) ordered.push_back(&a);

  Table t;
  t.step = step;
  for (const auto* a : ordered) {
    if (a->sequence != seq) throw ValidationError("aggregates use different dataset sequences");
    if (a->steps.size() != seq.size())
      throw ValidationError(fmt::format("aggregate for {} has no successful replication", strategy_name(a->strategy)));
    t.columns.emplace_back(strategy_label(a->strategy));
  }
  const auto k = static_cast<std::size_t>(step);
  for (std::size_t d = 0; d <= k; ++d) {
    TableRow row{seq[d], {}};
    for (const auto* a : ordered) row.cells.push_back(a->steps[k].accuracy[d]);
    t.rows.push_back(std::move(row));
  }
  if (k == 1) {
    TableRow row{"Mean", {}};
    for (const auto* a : ordered) row.cells.push_back(a->steps[k].mean_all);
    t.rows.push_back(std::move(row));
  } else {
    TableRow mean{"Mean", {}};
    TableRow updated{"Updated mean", {}};
    for (const auto* a : ordered) {
      mean.cells.push_back(a->steps[k].mean_previous);
      updated.cells.push_back(a->steps[k].mean_all);
    }
    t.rows.push_back(std::move(mean));
    t.rows.push_back(std::move(updated));
  }
  return t;
}

std::string table_csv(const Table& t) {
  std::ostringstream out;
  out << "row,column,mean,std\n";
  for (const auto& row : t.rows)
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      out << row.name << ',' << t.columns[c] << ',' << exact(row.cells[c].mean) << ',' << exact(row.cells[c].std)
          << '\n';
  return out.str();
}

nlohmann::json table_json(const Table& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : t.rows) {
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      cells[t.columns[c]] = {{"mean", row.cells[c].mean}, {"std", row.cells[c].std}};
    rows.push_back({{"name", row.name}, {"cells", cells}});
  }
  return {{"step", t.step}, {"columns", t.columns}, {"rows", rows}};
}

std::string table_markdown(const Table& t) {
  std::ostringstream out;
  out << "| Dataset |";
  for (const auto& c : t.columns) out << ' ' << c << " |";
  out << "\n|---|";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << "---|";
  out << '\n';
  for (const auto& row : t.rows) {
    out << "| " << row.name << " |";
    for (const auto& cell : row.cells) out << ' ' << format_cell(cell) << " |";
    out << '\n';
  }
  return out.str();
}

Table table_from_json(const nlohmann::json& j) {
  Table t;
  t.step = j.at("step").get<int>();
  t.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& r : j.at("rows")) {
    TableRow row{r.at("name").get<std::string>(), {}};
    for (const auto& c : t.columns)
      row.cells.push_back({r.at("cells").at(c).at("mean").get<double>(), r.at("cells").at(c).at("std").get<double>()});
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table table_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  if (line != "row,column,mean,std") throw ValidationError("unexpected table CSV header: " + line);
  Table t;
  std::map<std::string, std::size_t> column_index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string part; std::getline(ls, part, ',');) f.push_back(part);
    if (f.size() != 4) throw ValidationError("malformed table CSV line: " + line);
    auto [it, inserted] = column_index.emplace(f[1], t.columns.size());
    if (inserted) t.columns.push_back(f[1]);
    if (t.rows.empty() || t.rows.back().name != f[0]) t.rows.push_back({f[0], {}});
    if (t.rows.back().cells.size() != it->second) throw ValidationError("table CSV columns out of order");
    t.rows.back().cells.push_back({std::stod(f[2]), std::stod(f[3])});
  }
  return t;
}

namespace {

std::string step_label(const std::vector<std::string>& seq, std::size_t k) { return k == 0 ? "Baseline" : seq[k]; }

std::vector<const AggregateResult*> usable(const std::vector<AggregateResult>& aggregates) {
  std::vector<const AggregateResult*> out;
  for (auto s : kAllStrategies)
    for (const auto& a : aggregates)
      if (a.strategy == s && a.steps.size() == a.sequence.size()) out.push_back(&a);
  return out;
}

}  // namespace

std::string plotdata_source_accuracy(const std::vector<AggregateResult>& aggregates) {
  std::ostringstream out;
  out << "strategy,step,label,mean,std\n";
  for (const auto* a : usable(aggregates))
    for (std::size_t k = 0; k < a->steps.size(); ++k)
      out << strategy_name(a->strategy) << ',' << k << ',' << step_label(a->sequence, k) << ','
          << exact(a->steps[k].accuracy[0].mean) << ',' << exact(a->steps[k].accuracy[0].std) << '\n';
  return out.str();
}

std::string plotdata_intermediate_accuracy(const std::vector<AggregateResult>& aggregates) {
  std::ostringstream out;
  out << "strategy,dataset,step,label,mean,std\n";
  for (const auto* a : usable(aggregates))
    for (std::size_t d = 1; d + 1 < a->sequence.size(); ++d)
      for (std::size_t k = d; k < a->steps.size(); ++k)
        out << strategy_name(a->strategy) << ',' << a->sequence[d] << ',' << k << ',' << step_label(a->sequence, k)
            << ',' << exact(a->steps[k].accuracy[d].mean) << ',' << exact(a->steps[k].accuracy[d].std) << '\n';
  return out.str();
}

std::string plotdata_source_f1(const std::vector<AggregateResult>& aggregates) {
  std::ostringstream out;
  out << "strategy,step,label,class,mean,std\n";
  for (const auto* a : usable(aggregates))
    for (std::size_t k = 0; k < a->steps.size(); ++k)
      for (std::size_t c = 0; c < kClassNames.size(); ++c)
        out << strategy_name(a->strategy) << ',' << k << ',' << step_label(a->sequence, k) << ',' << kClassNames[c]
            << ',' << exact(a->steps[k].f1[0][c].mean) << ',' << exact(a->steps[k].f1[0][c].std) << '\n';
  return out.str();
}

std::vector<std::filesystem::path> emit_report(const std::vector<AggregateResult>& aggregates,
                                               const std::vector<ReportFormat>& formats,
                                               const std::filesystem::path& metrics_dir) {
  if (aggregates.empty()) throw ValidationError("nothing to report");
  std::error_code ec;
  std::filesystem::create_directories(metrics_dir, ec);
  if (ec) throw ValidationError("cannot create " + metrics_dir.string() + ": " + ec.message());
  auto want = [&](ReportFormat f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };

  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& contents) {
    const auto path = metrics_dir / name;
    io::write_file_atomic(path, contents);
    written.push_back(path);
  };
  const auto steps = static_cast<int>(aggregates.front().sequence.size());
  for (int k = 1; k < steps; ++k) {
    if (!want(ReportFormat::csv) && !want(ReportFormat::json) && !want(ReportFormat::markdown)) break;
    const Table t = build_table(aggregates, k);
    if (want(ReportFormat::csv)) emit(fmt::format("table_{}.csv", k), table_csv(t));
    if (want(ReportFormat::json)) emit(fmt::format("table_{}.json", k), table_json(t).dump(2) + "\n");
    if (want(ReportFormat::markdown)) emit(fmt::format("table_{}.md", k), table_markdown(t));
  }
  if (want(ReportFormat::plot_data)) {
    emit("plotdata_fig4.csv", plotdata_source_accuracy(aggregates));
    emit("plotdata_fig5.csv", plotdata_intermediate_accuracy(aggregates));
    emit("plotdata_fig6.csv", plotdata_source_f1(aggregates));
  }
  return written;
}

namespace {

nlohmann::json scores_json(const ClassScores& s) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t c = 0; c < s.size(); ++c) j[std::string(kClassNames[c])] = s[c];
  return j;
}

ClassScores scores_from_json(const nlohmann::json& j) {
  ClassScores s{};
  for (std::size_t c = 0; c < s.size(); ++c) s[c] = j.at(std::string(kClassNames[c])).get<double>();
  return s;
}

Strategy strategy_from_json(const nlohmann::json& j) {
  const auto name = j.get<std::string>();
  const auto s = strategy_from_name(name);
  if (!s) throw ValidationError("unknown strategy '" + name + "'");
  return *s;
}

nlohmann::json cell_json(const Cell& c) { return {{"mean", c.mean}, {"std", c.std}}; }
Cell cell_from_json(const nlohmann::json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

}  // namespace

nlohmann::json to_json(const ContinualRunResult& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& step : r.steps) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& m : step)
      entries.push_back({{"dataset", m.dataset}, {"accuracy", m.accuracy}, {"f1", scores_json(m.f1)},
                         {"support", m.support}});
    steps.push_back(entries);
  }
  return {{"strategy", strategy_name(r.strategy)},
          {"seed", r.seed},
          {"replication", r.replication},
          {"sequence", r.sequence},
          {"steps", steps},
          {"training_set_sizes", r.training_set_sizes},
          {"error", r.error}};
}

ContinualRunResult run_result_from_json(const nlohmann::json& j) {
  ContinualRunResult r;
  r.strategy = strategy_from_json(j.at("strategy"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.replication = j.at("replication").get<int>();
  r.sequence = j.at("sequence").get<std::vector<std::string>>();
  for (const auto& step : j.at("steps")) {
    std::vector<StepMetrics> entries;
    for (const auto& m : step)
      entries.push_back({m.at("dataset").get<std::string>(), m.at("accuracy").get<double>(),
                         scores_from_json(m.at("f1")), m.at("support").get<int>()});
    r.steps.push_back(std::move(entries));
  }
  r.training_set_sizes = j.at("training_set_sizes").get<std::vector<std::size_t>>();
  r.error = j.value("error", std::string{});
  return r;
}

nlohmann::json to_json(const AggregateResult& a) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : a.steps) {
    nlohmann::json acc = nlohmann::json::array();
    nlohmann::json f1 = nlohmann::json::array();
    for (std::size_t d = 0; d < s.datasets.size(); ++d) {
      acc.push_back(cell_json(s.accuracy[d]));
      nlohmann::json per_class = nlohmann::json::object();
      for (std::size_t c = 0; c < kClassNames.size(); ++c) per_class[std::string(kClassNames[c])] = cell_json(s.f1[d][c]);
      f1.push_back(per_class);
    }
    steps.push_back({{"datasets", s.datasets},
                     {"accuracy", acc},
                     {"f1", f1},
                     {"mean_all", cell_json(s.mean_all)},
                     {"mean_previous", cell_json(s.mean_previous)}});
  }
  return {{"strategy", strategy_name(a.strategy)},
          {"sequence", a.sequence},
          {"replications", a.replications},
          {"failures", a.failures},
          {"steps", steps}};
}

AggregateResult aggregate_from_json(const nlohmann::json& j) {
  AggregateResult a;
  a.strategy = strategy_from_json(j.at("strategy"));
  a.sequence = j.at("sequence").get<std::vector<std::string>>();
  a.replications = j.at("replications").get<int>();
  a.failures = j.at("failures").get<int>();
  for (const auto& s : j.at("steps")) {
    AggregateStep step;
    step.datasets = s.at("datasets").get<std::vector<std::string>>();
    for (const auto& c : s.at("accuracy")) step.accuracy.push_back(cell_from_json(c));
    for (const auto& per_class : s.at("f1")) {
      std::array<Cell, kNumClasses> f1{};
      for (std::size_t c = 0; c < f1.size(); ++c) f1[c] = cell_from_json(per_class.at(std::string(kClassNames[c])));
      step.f1.push_back(f1);
    }
    step.mean_all = cell_from_json(s.at("mean_all"));
    step.mean_previous = cell_from_json(s.at("mean_previous"));
    a.steps.push_back(std::move(step));
  }
  return a;
}

}  // namespace ecgr
