#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

#include "ecgr/eval.hpp"

#include <algorithm>
#include <random>
#include <sstream>

using namespace ecgr;

namespace {

const std::vector<std::string> kSeq{"src", "b", "c", "d"};

// Run whose cell (step k, dataset d) is value(k, d).
template <typename F>
ContinualRunResult make_run(Strategy s, const std::vector<std::string>& seq, int rep, F value) {
  ContinualRunResult r;
  r.strategy = s;
  r.replication = rep;
  r.seed = static_cast<std::uint64_t>(rep);
  r.sequence = seq;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    std::vector<StepMetrics> step;
    for (std::size_t d = 0; d <= k; ++d) {
      StepMetrics m{seq[d], value(k, d), {}, 10};
      m.f1.fill(value(k, d));
      step.push_back(m);
    }
    r.steps.push_back(step);
    if (k > 0) r.training_set_sizes.push_back(100);
  }
  return r;
}

std::vector<AggregateResult> all_strategies(const std::vector<std::string>& seq, int reps) {
  std::vector<AggregateResult> out;
  for (auto s : kAllStrategies) {
    std::vector<ContinualRunResult> runs;
    for (int r = 0; r < reps; ++r)
      runs.push_back(make_run(s, seq, r, [&](std::size_t k, std::size_t d) {
        return 0.1 + 0.1 * static_cast<double>(static_cast<int>(s)) + 0.05 * static_cast<double>(k + d) +
               0.01 * r;
      }));
    out.push_back(aggregate_replications(runs));
  }
  return out;
}

}  // namespace

TEST_CASE("accuracy examples") {
  CHECK(accuracy({0, 1, 2}, {0, 1, 2}) == 1.0);
  CHECK(accuracy({0, 1, 2, 3}, {0, 1, 0, 0}) == 0.5);
  CHECK_THROWS_AS((void)accuracy({}, {}), ValidationError);
  CHECK_THROWS_AS((void)accuracy({1}, {1, 2}), ValidationError);
}

TEST_CASE("accuracy equals confusion trace and support-weighted recall") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + static_cast<int>(rng() % 200);
    std::vector<int> pred(n), truth(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 7);
      pred[i] = rng() % 3 == 0 ? truth[i] : static_cast<int>(rng() % 7);
    }
    Eigen::MatrixXi brute = Eigen::MatrixXi::Zero(7, 7);
    for (int i = 0; i < n; ++i) ++brute(truth[i], pred[i]);
    const Eigen::MatrixXi cm = confusion_matrix(pred, truth);
    CHECK(cm == brute);
    const double acc = accuracy(pred, truth);
    CHECK(acc == doctest::Approx(static_cast<double>(cm.trace()) / n).epsilon(1e-12));
    double weighted = 0.0;
    for (int c = 0; c < 7; ++c) {
      const int support = cm.row(c).sum();
      if (support > 0) weighted += static_cast<double>(support) / n * cm(c, c) / support;
    }
    CHECK(acc == doctest::Approx(weighted).epsilon(1e-12));
  }
}

TEST_CASE("per-class f1 examples") {
  const ClassScores perfect = per_class_f1({0, 1, 2, 3, 4, 5, 6}, {0, 1, 2, 3, 4, 5, 6});
  for (double f : perfect) CHECK(f == 1.0);

  const ClassScores absent = per_class_f1({0, 0}, {0, 0});
  CHECK(absent[0] == 1.0);
  CHECK(absent[3] == 0.0);

  // Class 0: TP 2, FP 1, FN 1.
  const std::vector<int> truth{0, 0, 0, 1, 2};
  const std::vector<int> pred{0, 0, 1, 0, 2};
  const ClassScores f1 = per_class_f1(pred, truth);
  CHECK(f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(f1[0] == doctest::Approx(oracle::f1_of(0, pred, truth)));
}

TEST_CASE("per-class f1 matches a scanning oracle") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 30; ++t) {
    const int n = 1 + static_cast<int>(rng() % 80);
    std::vector<int> pred(n), truth(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 7);
      pred[i] = static_cast<int>(rng() % 7);
    }
    const ClassScores f1 = per_class_f1(pred, truth);
    for (int c = 0; c < 7; ++c) CHECK(f1[c] == doctest::Approx(oracle::f1_of(c, pred, truth)).epsilon(1e-12));
  }
}

TEST_CASE("mean rows reproduce the published cells") {
  CHECK(format_cell(mean_over_datasets({0.98, 0.28})) == "0.63");
  CHECK(format_cell(mean_over_datasets({0.75, 0.77, 0.22})) == "0.58");
  CHECK(format_cell(mean_over_datasets({0.63, 0.57, 0.49, 0.79})) == "0.62");
  CHECK(mean_over_datasets({0.98, 0.28}) == doctest::Approx(0.63));
  CHECK_THROWS_AS((void)mean_over_datasets({}), ValidationError);
}

TEST_CASE("cell formatting") {
  CHECK(format_cell(Cell{0.78, 0.03}) == "0.78±0.03");
  CHECK(format_cell(0.125) == "0.13");
  CHECK(format_cell(1.0) == "1.00");
  CHECK(format_cell(0.0) == "0.00");
}

TEST_CASE("two replications give mean 0.70 and std 0.10") {
  const auto a = make_run(Strategy::joint, {"s", "t"}, 0, [](std::size_t, std::size_t) { return 0.8; });
  const auto b = make_run(Strategy::joint, {"s", "t"}, 1, [](std::size_t, std::size_t) { return 0.6; });
  const AggregateResult agg = aggregate_replications({a, b});
  CHECK(agg.replications == 2);
  CHECK(agg.steps[1].accuracy[0].mean == doctest::Approx(0.7));
  CHECK(agg.steps[1].accuracy[0].std == doctest::Approx(0.1));

  const AggregateResult same = aggregate_replications({a, a, a});
  for (const auto& step : same.steps)
    for (const auto& c : step.accuracy) CHECK(c.std <= 1e-12);
}

TEST_CASE("aggregation agrees with an independent statistics routine") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ContinualRunResult> runs;
  std::vector<std::vector<std::vector<double>>> cells(4, std::vector<std::vector<double>>(4));
  for (int r = 0; r < 7; ++r) {
    auto run = make_run(Strategy::ecgr, kSeq, r, [&](std::size_t, std::size_t) { return u(rng); });
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t d = 0; d <= k; ++d) cells[k][d].push_back(run.steps[k][d].accuracy);
    runs.push_back(run);
  }
  const AggregateResult agg = aggregate_replications(runs);
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> means_all;
    for (int r = 0; r < 7; ++r) {
      std::vector<double> row;
      for (std::size_t d = 0; d <= k; ++d) row.push_back(cells[k][d][static_cast<std::size_t>(r)]);
      means_all.push_back(oracle::population_stats(row).mean);
    }
    const auto ma = oracle::population_stats(means_all);
    CHECK(std::abs(agg.steps[k].mean_all.mean - ma.mean) < 1e-12);
    CHECK(std::abs(agg.steps[k].mean_all.std - ma.std) < 1e-12);
    for (std::size_t d = 0; d <= k; ++d) {
      const auto st = oracle::population_stats(cells[k][d]);
      CHECK(std::abs(agg.steps[k].accuracy[d].mean - st.mean) < 1e-12);
      CHECK(std::abs(agg.steps[k].accuracy[d].std - st.std) < 1e-12);
      CHECK(agg.steps[k].accuracy[d].std >= 0.0);
    }
  }
}

TEST_CASE("aggregation is invariant to replication order") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ContinualRunResult> runs;
  for (int r = 0; r < 5; ++r)
    runs.push_back(make_run(Strategy::fine_tune, kSeq, r, [&](std::size_t, std::size_t) { return u(rng); }));
  const AggregateResult a = aggregate_replications(runs);
  std::reverse(runs.begin(), runs.end());
  std::swap(runs[1], runs[3]);
  const AggregateResult b = aggregate_replications(runs);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t d = 0; d <= k; ++d) {
      CHECK(a.steps[k].accuracy[d].mean == doctest::Approx(b.steps[k].accuracy[d].mean).epsilon(1e-14));
      CHECK(a.steps[k].accuracy[d].std == doctest::Approx(b.steps[k].accuracy[d].std).epsilon(1e-12));
    }
}

TEST_CASE("aggregation skips failures and rejects mixed inputs") {
  auto ok = make_run(Strategy::ecgr_qa, kSeq, 0, [](std::size_t, std::size_t) { return 0.5; });
  ContinualRunResult bad;
  bad.strategy = Strategy::ecgr_qa;
  bad.error = "diverged";
  const AggregateResult agg = aggregate_replications({bad, ok});
  CHECK(agg.replications == 1);
  CHECK(agg.failures == 1);

  auto other = make_run(Strategy::joint, kSeq, 1, [](std::size_t, std::size_t) { return 0.5; });
  CHECK_THROWS_AS((void)aggregate_replications({ok, other}), ValidationError);
  auto shorter = make_run(Strategy::ecgr_qa, {"src", "b"}, 1, [](std::size_t, std::size_t) { return 0.5; });
  CHECK_THROWS_AS((void)aggregate_replications({ok, shorter}), ValidationError);

  auto broken = ok;
  broken.steps[2].pop_back();
  CHECK_THROWS_AS(broken.check_shape(), ValidationError);
}

TEST_CASE("two-dataset table has two rows and a mean row") {
  const auto aggs = all_strategies({"src", "tgt"}, 2);
  const Table t = build_table(aggs, 1);
  CHECK(t.columns ==
        std::vector<std::string>{"Current", "Joining", "Fine-Tuning", "ECgr", "ECgr+QA", "ECgr+wQA"});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[2].name == "Mean");
  for (std::size_t c = 0; c < t.columns.size(); ++c)
    CHECK(format_cell(t.rows[2].cells[c].mean) ==
          format_cell(mean_over_datasets({t.rows[0].cells[c].mean, t.rows[1].cells[c].mean})));

  const std::string md = table_markdown(t);
  int lines = 0;
  for (char ch : md) lines += ch == '\n';
  CHECK(lines == 2 + 3);
  CHECK(md.find("| Mean |") != std::string::npos);
  CHECK(md.find("±") != std::string::npos);
}

TEST_CASE("later tables carry Mean over previous and Updated mean rows") {
  const auto aggs = all_strategies(kSeq, 3);
  const Table t = build_table(aggs, 3);
  REQUIRE(t.rows.size() == 6);
  CHECK(t.rows[4].name == "Mean");
  CHECK(t.rows[5].name == "Updated mean");
  // The synthetic runs have per-replication offsets that are the same for
  // every cell, so the mean of means equals the mean of the cell means.
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    CHECK(t.rows[4].cells[c].mean ==
          doctest::Approx(mean_over_datasets({t.rows[0].cells[c].mean, t.rows[1].cells[c].mean,
                                              t.rows[2].cells[c].mean})));
    CHECK(t.rows[5].cells[c].mean ==
          doctest::Approx(mean_over_datasets({t.rows[0].cells[c].mean, t.rows[1].cells[c].mean,
                                              t.rows[2].cells[c].mean, t.rows[3].cells[c].mean})));
  }
  CHECK_THROWS_AS((void)build_table(aggs, 0), ValidationError);
  CHECK_THROWS_AS((void)build_table(aggs, 4), ValidationError);
}

TEST_CASE("csv and json emissions round-trip") {
  const auto aggs = all_strategies(kSeq, 4);
  const Table t = build_table(aggs, 2);
  const Table from_csv = table_from_csv(table_csv(t));
  const Table from_json = table_from_json(nlohmann::json::parse(table_json(t).dump()));
  for (const Table* back : {&from_csv, &from_json}) {
    CHECK(back->columns == t.columns);
    REQUIRE(back->rows.size() == t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      CHECK(back->rows[r].name == t.rows[r].name);
      for (std::size_t c = 0; c < t.columns.size(); ++c) {
        CHECK(back->rows[r].cells[c].mean == t.rows[r].cells[c].mean);
        CHECK(back->rows[r].cells[c].std == t.rows[r].cells[c].std);
      }
    }
  }
}

TEST_CASE("source accuracy plot data has one point per step per strategy") {
  const auto aggs = all_strategies(kSeq, 2);
  std::istringstream in(plotdata_source_accuracy(aggs));
  std::string line;
  std::getline(in, line);
  CHECK(line == "strategy,step,label,mean,std");
  std::map<std::string, std::vector<std::string>> labels;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    REQUIRE(f.size() == 5);
    labels[f[0]].push_back(f[2]);
  }
  CHECK(labels.size() == kAllStrategies.size());
  for (const auto& [s, l] : labels) CHECK(l == std::vector<std::string>{"Baseline", "b", "c", "d"});
}

TEST_CASE("emit_report writes every table and plot file") {
  testutil::TempDir dir("report");
  const auto aggs = all_strategies(kSeq, 2);
  const auto written = emit_report(
      aggs, {ReportFormat::csv, ReportFormat::json, ReportFormat::markdown, ReportFormat::plot_data}, dir.path());
  for (int k = 1; k <= 3; ++k)
    for (const char* ext : {"csv", "json", "md"})
      CHECK(std::filesystem::exists(dir.path() / ("table_" + std::to_string(k) + "." + ext)));
  for (const char* f : {"plotdata_fig4.csv", "plotdata_fig5.csv", "plotdata_fig6.csv"})
    CHECK(std::filesystem::exists(dir.path() / f));
  CHECK(written.size() == 12);
  CHECK(io::read_file(dir.path() / "plotdata_fig6.csv").rfind("strategy,step,label,class,mean,std\n", 0) == 0);
}

TEST_CASE("run results and aggregates survive json") {
  auto run = make_run(Strategy::ecgr_wqa, kSeq, 2, [](std::size_t k, std::size_t d) { return 0.1 * (k + 1) + 0.01 * d; });
  const ContinualRunResult back = run_result_from_json(nlohmann::json::parse(to_json(run).dump()));
  CHECK(back.strategy == run.strategy);
  CHECK(back.replication == 2);
  CHECK(back.training_set_sizes == run.training_set_sizes);
  CHECK(back.steps[3][1].accuracy == run.steps[3][1].accuracy);
  CHECK(back.steps[3][1].f1 == run.steps[3][1].f1);

  const AggregateResult agg = aggregate_replications({run});
  const AggregateResult agg_back = aggregate_from_json(nlohmann::json::parse(to_json(agg).dump()));
  CHECK(agg_back.steps[2].mean_previous.mean == agg.steps[2].mean_previous.mean);
  CHECK(agg_back.replications == 1);
}
