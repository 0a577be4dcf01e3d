#include "ecgr/checkpoint.hpp"
#include "ecgr/io.hpp"
#include "ecgr/pipeline.hpp"
#include "ecgr/seed.hpp"
#include "ecgr/toy.hpp"

#include "CLI11.hpp"

#include <fmt/core.h>

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <set>

namespace fs = std::filesystem;
using namespace ecgr;

namespace {

struct Options {
  std::string config;
  std::string run_dir;
  std::vector<std::string> strategies;
  std::string dataset;
  std::vector<std::string> formats;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  bool force = false;
  bool quiet = false;
  // make-toy
  std::string out;
  int per_class = 100;
  int image_size = 32;
};

// Progress lines go to stderr and to the command's log file.
class Logger {
 public:
  explicit Logger(bool quiet) : quiet_(quiet) {}
  void operator()(const std::string& line) {
    std::lock_guard lock(mu_);
    if (!quiet_) std::cerr << line << "\n";
    text_ += line + "\n";
  }
  void warn(const std::string& line) {
    std::lock_guard lock(mu_);
    std::cerr << "warning: " << line << "\n";
    text_ += "warning: " + line + "\n";
  }
  [[nodiscard]] std::string text() const {
    std::lock_guard lock(mu_);
    return text_;
  }

 private:
  bool quiet_;
  mutable std::mutex mu_;
  std::string text_;
};

struct RunDir {
  fs::path root;
  [[nodiscard]] fs::path checkpoints() const { return root / "checkpoints"; }
  [[nodiscard]] fs::path synthetic() const { return root / "synthetic"; }
  [[nodiscard]] fs::path qa_reports() const { return root / "qa_reports"; }
  [[nodiscard]] fs::path metrics() const { return root / "metrics"; }
  [[nodiscard]] fs::path logs() const { return root / "logs"; }
  [[nodiscard]] fs::path classifier(const std::string& ds) const {
    return checkpoints() / fmt::format("classifier-{}.ckpt", ds);
  }
  [[nodiscard]] fs::path generator(const std::string& ds, int c) const {
    return checkpoints() / fmt::format("generator-{}-{}.ckpt", ds, class_name(class_from_id(c)));
  }
  [[nodiscard]] fs::path synthetic_dir(const std::string& ds, int replication) const {
    return synthetic() / ds / fmt::format("replication-{}", replication);
  }

  void create() const {
    for (const auto& d : {checkpoints(), synthetic(), qa_reports(), metrics(), logs()}) fs::create_directories(d);
  }
};

fs::path output_root() {
  if (const char* env = std::getenv("ECGR_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

PipelinePlan load(const Options& o) {
  if (o.config.empty()) throw ValidationError("--config is required");
  PipelinePlan plan = load_plan(o.config);
  if (o.seed) plan.base_seed = *o.seed;
  if (!o.strategies.empty()) {
    plan.strategies.clear();
    for (const auto& name : o.strategies) {
      const auto s = strategy_from_name(name);
      if (!s) throw ValidationError("unknown strategy '" + name + "'");
      plan.strategies.push_back(*s);
    }
  }
  for (const auto& d : plan.datasets)
    if (d.name.find_first_of("/\\") != std::string::npos || d.name == "." || d.name == "..")
      throw ValidationError("dataset name '" + d.name + "' cannot be used as a directory name");
  return plan;
}

RunDir run_dir_for(const Options& o, const PipelinePlan* plan) {
  if (!o.run_dir.empty()) return {o.run_dir};
  if (!plan) throw ValidationError("--run-dir or --config is required");
  return {output_root() / plan->run_id};
}

void refuse_overwrite(const fs::path& p, bool force) {
  if (fs::exists(p) && !force)
    throw ValidationError(p.string() + " already exists; pass --force to overwrite");
}

// Rewrites the digest list over every artifact except logs.
void write_digests(const RunDir& run) {
  std::map<std::string, std::string> digests;
  for (const auto& e : fs::recursive_directory_iterator(run.root)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), run.root);
    const std::string top = rel.begin()->string();
    if (top == "logs" || rel == "MANIFEST.json") continue;
    digests[rel.generic_string()] = io::sha256_file(e.path());
  }
  io::write_file_atomic(run.root / "MANIFEST.json", nlohmann::json(digests).dump(2) + "\n");
}

nlohmann::json classifier_config(const PipelinePlan& plan) {
  const nlohmann::json j = plan_to_json(plan);
  return {{"image_size", j.at("image_size")}, {"classifier", j.at("classifier")}, {"train", j.at("train")}};
}

nlohmann::json gan_config(const PipelinePlan& plan) { return plan_to_json(plan).at("gan"); }

ClassifierModel train_source_like(const PipelinePlan& plan, const Dataset& train, std::uint64_t seed,
                                  Logger& log, const RunDir& run) {
  auto model = build_classifier<float>(kNumClasses, plan.image_size, plan.classifier, derive_seed(seed, "init"));
  TrainConfig cfg = plan.train;
  cfg.scope = TrainableScope::all;
  cfg.seed = derive_seed(seed, "train");
  log(fmt::format("training classifier on {} ({} images)", train.name, train.size()));
  auto [trained, tlog] = train_classifier(std::move(model), train, cfg);
  io::write_file_atomic(run.logs() / fmt::format("train-classifier-{}.csv", train.name), tlog.csv());
  return std::move(trained);
}

void save_classifier(const RunDir& run, const std::string& ds, const ClassifierModel& model, const PipelinePlan& plan,
                     std::uint64_t seed) {
  save_checkpoint(run.classifier(ds), model,
                  {config_hash(classifier_config(plan)), seed, {{"dataset", ds}, {"role", "classifier"}}});
}

std::uint64_t classifier_seed(const PipelinePlan& plan, const std::string& ds) {
  return derive_seed(plan.base_seed, "classifier/" + ds);
}

// Offline datasets: every dataset that a later step replays.
std::vector<std::size_t> offline_indices(const PipelinePlan& plan) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i + 1 < plan.datasets.size(); ++i) out.push_back(i);
  return out;
}

int cmd_train_classifier(const Options& o, Logger& log) {
  const PipelinePlan plan = load(o);
  const std::string name = o.dataset.empty() ? plan.datasets.front().name : o.dataset;
  std::size_t index = plan.datasets.size();
  for (std::size_t i = 0; i < plan.datasets.size(); ++i)
    if (plan.datasets[i].name == name) index = i;
  if (index == plan.datasets.size()) throw ValidationError("dataset '" + name + "' is not part of the plan");
  const RunDir run = run_dir_for(o, &plan);
  if (o.dry_run) {
    std::cout << fmt::format("train classifier on {} -> {}\n", name, run.classifier(name).string());
    return 0;
  }
  refuse_overwrite(run.classifier(name), o.force);
  run.create();
  const PreparedDataset ds = prepare_dataset(plan, index);
  const auto seed = classifier_seed(plan, name);
  const ClassifierModel model = train_source_like(plan, ds.train, seed, log, run);
  save_classifier(run, name, model, plan, seed);
  const StepMetrics m = evaluate_classifier(model, ds.test);
  log(fmt::format("{}: test accuracy {:.4f}, {} parameters", name, m.accuracy, count_parameters(model)));
  io::write_file_atomic(run.metrics() / fmt::format("classifier-{}.json", name),
                        nlohmann::json{{"dataset", name},
                                       {"test_accuracy", m.accuracy},
                                       {"parameter_count", count_parameters(model)}}
                                .dump(2) + "\n");
  write_digests(run);
  std::cout << run.classifier(name).string() << "\n";
  return 0;
}

void persist_synthetic(const RunDir& run, const SyntheticEntry& entry, Logger& log) {
  const fs::path dir = run.synthetic_dir(entry.dataset, entry.replication);
  io::write_file_atomic(dir / "manifest.csv", entry.manifest());
  io::write_file_atomic(run.qa_reports() / entry.dataset / fmt::format("replication-{}.json", entry.replication),
                        entry.report.to_json().dump(2) + "\n");
  for (EmotionClass c : entry.report.fully_rejected())
    log.warn(fmt::format("QA rejected every {} sample of {} (replication {})", class_name(c), entry.dataset,
                         entry.replication));
}

int cmd_offline(const Options& o, Logger& log) {
  const PipelinePlan plan = load(o);
  const RunDir run = run_dir_for(o, &plan);
  const auto indices = offline_indices(plan);
  if (o.dry_run) {
    for (auto i : indices) {
      const auto& name = plan.datasets[i].name;
      std::cout << fmt::format("classifier {} -> {}\n", name, run.classifier(name).string());
      for (int c = 0; c < kNumClasses; ++c)
        std::cout << fmt::format("generator {}/{} -> {}\n", name, class_name(class_from_id(c)),
                                 run.generator(name, c).string());
      std::cout << fmt::format("synthesize + qa {} -> {}\n", name, run.synthetic_dir(name, 0).string());
    }
    return 0;
  }
  for (auto i : indices) refuse_overwrite(run.synthetic() / plan.datasets[i].name, o.force);
  run.create();

  std::vector<PreparedDataset> prepared;
  for (auto i : indices) prepared.push_back(prepare_dataset(plan, i));
  std::vector<const Dataset*> trains;
  for (const auto& p : prepared) trains.push_back(&p.train);

  std::atomic<bool> diverged = false;
  OfflineHooks hooks;
  hooks.jobs = o.jobs;
  hooks.log = [&log](const std::string& line) { log(line); };
  hooks.train_classifier = [&](const Dataset& train, std::uint64_t seed) -> std::shared_ptr<const ImageClassifier> {
    const fs::path path = run.classifier(train.name);
    // Reuse a checkpoint from train-classifier when it was made from the same config and seed.
    if (fs::exists(path) && !o.force) {
      const CheckpointInfo info = read_checkpoint_info(path);
      if (info.header.at("config_hash") == config_hash(classifier_config(plan)) && info.header.at("seed") == seed) {
        log(fmt::format("offline: reusing {}", path.string()));
        return std::make_shared<ClassifierModel>(load_classifier(path));
      }
    }
    try {
      auto model = std::make_shared<ClassifierModel>(train_source_like(plan, train, seed, log, run));
      save_classifier(run, train.name, *model, plan, seed);
      return model;
    } catch (const DivergenceError&) {
      diverged = true;
      throw;
    }
  };
  hooks.train_generator = [&](const std::string& ds, EmotionClass label, const std::vector<LabeledImage>& samples,
                              std::uint64_t seed) -> std::shared_ptr<const ImageGenerator> {
    GanConfig cfg = plan.gan;
    cfg.seed = seed;
    try {
      auto [gen, glog] = train_wgangp_for_class<float>(samples, cfg);
      gen.set_id(ds + "/" + std::string(class_name(label)));
      const int c = class_id(label);
      save_checkpoint(run.generator(ds, c), gen,
                      {config_hash(gan_config(plan)), seed, {{"dataset", ds}, {"class", class_name(label)}}});
      io::write_file_atomic(run.logs() / fmt::format("gan-{}-{}.csv", ds, class_name(label)), glog.csv());
      return std::make_shared<GeneratorModel>(std::move(gen));
    } catch (const DivergenceError& e) {
      diverged = true;
      io::write_file_atomic(run.logs() / fmt::format("gan-{}-{}.csv", ds, class_name(label)), e.log_csv());
      throw;
    }
  };

  const OfflineResult result = run_offline_stage(trains, plan, hooks);
  for (std::size_t k = 0; k < prepared.size(); ++k) {
    const auto& name = prepared[k].name;
    if (!result.collection.contains(name)) continue;
    const SyntheticEntry& entry = result.collection.at(name);
    persist_synthetic(run, entry, log);
    std::vector<std::vector<Image>> rows;
    for (const auto& set : entry.classes) {
      std::vector<Image> row;
      const auto real = prepared[k].train.images_of(set.label);
      row.push_back(real.empty() ? Image::Zero(plan.image_size, plan.image_size) : real.front().pixels);
      for (std::size_t i = 0; i < std::min<std::size_t>(8, set.candidates.size()); ++i)
        row.push_back(set.candidates[i].pixels);
      rows.push_back(std::move(row));
    }
    io::write_png(run.synthetic() / name / "contact_sheet.png", io::contact_sheet(rows, plan.image_size));
    log(fmt::format("offline: {} accepted {} of {} candidates", name, entry.report.accepted(),
                    entry.report.accepted() + entry.report.rejected()));
  }
  io::write_file_atomic(run.logs() / "offline.log", log.text());
  write_digests(run);
  if (!result.models.failures.empty()) {
    for (const auto& [name, why] : result.models.failures) std::cerr << "error: " << name << ": " << why << "\n";
    return diverged ? 2 : 1;
  }
  return 0;
}

// Rebuilds the offline models of datasets [0, last) from their checkpoints.
OfflineModels load_offline_models(const RunDir& run, const PipelinePlan& plan) {
  OfflineModels models;
  for (auto i : offline_indices(plan)) {
    const auto& name = plan.datasets[i].name;
    std::vector<fs::path> needed{run.classifier(name)};
    for (int c = 0; c < kNumClasses; ++c) needed.push_back(run.generator(name, c));
    for (const auto& p : needed)
      if (!fs::exists(p))
        throw ValidationError(fmt::format("offline artifacts for dataset '{}' are missing ({}); run the offline "
                                          "command first",
                                          name, p.string()));
    models.classifiers[name] = std::make_shared<ClassifierModel>(load_classifier(run.classifier(name)));
    auto& gens = models.generators[name];
    for (int c = 0; c < kNumClasses; ++c)
      gens.push_back(std::make_shared<GeneratorModel>(load_generator(run.generator(name, c))));
  }
  return models;
}

int cmd_continual(const Options& o, Logger& log) {
  const PipelinePlan plan = load(o);
  const RunDir run = run_dir_for(o, &plan);
  const std::string source = plan.datasets.front().name;
  if (o.dry_run) {
    for (int r = 0; r < plan.replications; ++r)
      for (Strategy s : plan.strategies)
        for (std::size_t k = 1; k < plan.datasets.size(); ++k)
          std::cout << fmt::format("replication {} {} step {}: adapt to {}\n", r, strategy_name(s), k,
                                   plan.datasets[k].name);
    return 0;
  }
  if (!fs::exists(run.classifier(source)))
    throw ValidationError(fmt::format("source classifier {} is missing; run train-classifier or offline first",
                                      run.classifier(source).string()));
  bool synthetic = false;
  for (Strategy s : plan.strategies) synthetic = synthetic || uses_synthetic(s);
  OfflineModels models;
  if (synthetic) models = load_offline_models(run, plan);
  for (Strategy s : plan.strategies) refuse_overwrite(run.metrics() / strategy_name(s), o.force);
  run.create();

  const ClassifierModel source_model = load_classifier(run.classifier(source));
  const std::vector<PreparedDataset> sequence = prepare_datasets(plan);
  const int per_class =
      plan.synthetic_per_class > 0 ? plan.synthetic_per_class : largest_class_count(sequence.front().train);

  std::vector<SyntheticCollection> collections(static_cast<std::size_t>(plan.replications));
  if (synthetic) {
    for (int r = 0; r < plan.replications; ++r) {
      log(fmt::format("continual: synthesizing replication {}", r));
      collections[static_cast<std::size_t>(r)] = synthesize_collection(models, plan, per_class, r, o.jobs);
      for (const auto& [name, entry] : collections[static_cast<std::size_t>(r)].entries)
        persist_synthetic(run, entry, log);
    }
  }

  std::atomic<bool> diverged = false;
  bool any_failed = false;
  for (Strategy s : plan.strategies) {
    const auto results = replicate(
        [&](int r, std::uint64_t seed) {
          log(fmt::format("continual: {} replication {}", strategy_name(s), r));
          try {
            return run_continual_stage(source_model, sequence, collections[static_cast<std::size_t>(r)], s, plan,
                                       seed, r);
          } catch (const DivergenceError&) {
            diverged = true;
            throw;
          }
        },
        plan.replications, plan.base_seed, o.jobs);
    const fs::path dir = run.metrics() / strategy_name(s);
    for (const auto& res : results) {
      io::write_file_atomic(dir / fmt::format("replication-{}.json", res.replication), to_json(res).dump(2) + "\n");
      if (res.failed()) {
        any_failed = true;
        log.warn(fmt::format("{} replication {} failed: {}", strategy_name(s), res.replication, res.error));
      }
    }
    const AggregateResult agg = aggregate_replications(results);
    io::write_file_atomic(dir / "aggregate.json", to_json(agg).dump(2) + "\n");
    if (!agg.steps.empty())
      log(fmt::format("continual: {} final source accuracy {}", strategy_name(s),
                      format_cell(agg.steps.back().accuracy.front())));
  }
  io::write_file_atomic(run.logs() / "continual.log", log.text());
  write_digests(run);
  if (any_failed) return diverged ? 2 : 1;
  return 0;
}

int cmd_report(const Options& o, Logger& log) {
  std::optional<PipelinePlan> plan;
  if (!o.config.empty()) plan = load(o);
  const RunDir run = run_dir_for(o, plan ? &*plan : nullptr);
  std::vector<ReportFormat> formats;
  for (const auto& f : o.formats) {
    if (f == "csv") formats.push_back(ReportFormat::csv);
    else if (f == "json") formats.push_back(ReportFormat::json);
    else if (f == "md" || f == "markdown") formats.push_back(ReportFormat::markdown);
    else if (f == "plot" || f == "plot_data") formats.push_back(ReportFormat::plot_data);
    else throw ValidationError("unknown report format '" + f + "'");
  }
  if (formats.empty())
    formats = {ReportFormat::csv, ReportFormat::json, ReportFormat::markdown, ReportFormat::plot_data};

  std::vector<AggregateResult> aggregates;
  if (fs::is_directory(run.metrics())) {
    for (Strategy s : kAllStrategies) {
      const fs::path p = run.metrics() / strategy_name(s) / "aggregate.json";
      if (fs::exists(p)) aggregates.push_back(aggregate_from_json(nlohmann::json::parse(io::read_file(p))));
    }
  }
  if (aggregates.empty()) throw ValidationError("no aggregate results under " + run.metrics().string());
  const fs::path out = run.metrics() / "report";
  if (o.dry_run) {
    std::cout << fmt::format("report over {} strategies -> {}\n", aggregates.size(), out.string());
    return 0;
  }
  refuse_overwrite(out, o.force);
  if (fs::exists(out)) fs::remove_all(out);
  for (const auto& p : emit_report(aggregates, formats, out)) std::cout << p.string() << "\n";
  log(fmt::format("report: {} strategies", aggregates.size()));
  write_digests(run);
  return 0;
}

int cmd_make_toy(const Options& o, Logger& log) {
  if (o.out.empty()) throw ValidationError("--out is required");
  const fs::path root = o.out;
  if (o.dry_run) {
    for (int d = 0; d < toy::kNumDomains; ++d)
      std::cout << fmt::format("toy domain {} -> {}\n", toy::domain_name(d), (root / toy::domain_name(d)).string());
    return 0;
  }
  refuse_overwrite(root, o.force);
  const std::uint64_t seed = o.seed.value_or(0);
  for (int d = 0; d < toy::kNumDomains; ++d) {
    const Dataset ds =
        toy::make_domain(d, o.per_class, o.image_size, derive_seed(seed, "toy-domain", static_cast<std::uint64_t>(d)));
    toy::write_domain(ds, root / toy::domain_name(d));
    log(fmt::format("wrote {} images to {}", ds.size(), (root / toy::domain_name(d)).string()));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotion-centred generative replay experiments"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "YAML plan file")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--seed", o.seed, "Override the plan's base seed");
    sub->add_option("--jobs", o.jobs, "Concurrent GAN trainings and replications")->check(CLI::PositiveNumber);
    sub->add_option("--run-dir", o.run_dir, "Run directory (default $ECGR_OUTPUT_ROOT/<run_id>)");
    sub->add_flag("--dry-run", o.dry_run, "Print the planned steps and exit");
    sub->add_flag("--force", o.force, "Allow overwriting existing artifacts");
    sub->add_flag("-q,--quiet", o.quiet, "Only print warnings and errors");
  };

  auto* train = app.add_subcommand("train-classifier", "Train the classifier of one dataset");
  common(train, true);
  train->add_option("--dataset", o.dataset, "Dataset name (default: the source dataset)");
  train->add_option("--strategy", o.strategies, "Ignored; accepted for a uniform command line");

  auto* offline = app.add_subcommand("offline", "Train classifiers and per-class generators, synthesize, filter");
  common(offline, true);
  offline->add_option("--strategy", o.strategies, "Ignored; accepted for a uniform command line");

  auto* continual = app.add_subcommand("continual", "Run the continual stage for one or more strategies");
  common(continual, true);
  continual->add_option("--strategy", o.strategies, "Strategy name; repeatable (default: the plan's list)");

  auto* report = app.add_subcommand("report", "Write tables and plot data from stored aggregates");
  common(report, false);
  report->add_option("--format", o.formats, "csv, json, md, plot (default: all)")->delimiter(',');

  auto* make_toy = app.add_subcommand("make-toy", "Render the four toy domains as PNG trees");
  make_toy->add_option("--out", o.out, "Output directory")->required();
  make_toy->add_option("--per-class", o.per_class, "Images per class")->check(CLI::PositiveNumber);
  make_toy->add_option("--size", o.image_size, "Image side length")->check(CLI::Range(8, 512));
  make_toy->add_option("--seed", o.seed, "Seed");
  make_toy->add_flag("--dry-run", o.dry_run, "Print the planned output and exit");
  make_toy->add_flag("--force", o.force, "Allow writing into an existing directory");
  make_toy->add_flag("-q,--quiet", o.quiet, "Only print warnings and errors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Logger log(o.quiet);
  try {
    if (*train) return cmd_train_classifier(o, log);
    if (*offline) return cmd_offline(o, log);
    if (*continual) return cmd_continual(o, log);
    if (*report) return cmd_report(o, log);
    if (*make_toy) return cmd_make_toy(o, log);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
