#include "ecgr/pipeline.hpp"

#include "ecgr/io.hpp"
#include "ecgr/seed.hpp"
#include "ecgr/toy.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace ecgr {

namespace fs = std::filesystem;

void PipelinePlan::validate() const {
  if (datasets.size() < 2) throw ValidationError("the dataset sequence needs at least 2 datasets");
  if (replications < 1) throw ValidationError("replications must be at least 1");
  if (strategies.empty()) throw ValidationError("no strategies selected");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
  if (synthetic_per_class < 0) throw ValidationError("synthetic_per_class must be non-negative");
  std::set<std::string> names;
  for (const auto& d : datasets) {
    if (d.name.empty()) throw ValidationError("every dataset needs a name");
    if (!names.insert(d.name).second) throw ValidationError("dataset name '" + d.name + "' appears twice");
    if (d.toy_domain) {
      toy::domain_style(*d.toy_domain);
    } else if (!fs::is_directory(d.root)) {
      throw ValidationError("dataset root " + d.root.string() + " for '" + d.name + "' does not exist");
    }
  }
  if (train.epochs < 1 || adapt.epochs < 1) throw ValidationError("classifier epochs must be at least 1");
  if (train.batch_size < 1 || adapt.batch_size < 1) throw ValidationError("classifier batch size must be at least 1");
  gan.validate();
  qa.validate();
}

namespace {

nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.optimizer.learning_rate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction}};
}

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.patience = j.value("patience", c.patience);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  return c;
}

nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Sequence: {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& item : node) a.push_back(yaml_to_json(item));
      return a;
    }
    case YAML::NodeType::Map: {
      nlohmann::json o = nlohmann::json::object();
      for (const auto& kv : node) o[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return o;
    }
    case YAML::NodeType::Scalar: {
      const std::string text = node.Scalar();
      if (node.Tag() == "!") return text;  // quoted
      long long i = 0;
      if (YAML::convert<long long>::decode(node, i)) return i;
      double d = 0.0;
      if (YAML::convert<double>::decode(node, d)) return d;
      bool b = false;
      if (YAML::convert<bool>::decode(node, b)) return b;
      return text;
    }
  }
  return nullptr;
}

}  // namespace

nlohmann::json plan_to_json(const PipelinePlan& plan) {
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& d : plan.datasets) {
    if (d.toy_domain)
      datasets.push_back({{"name", d.name}, {"toy", *d.toy_domain}, {"per_class", d.toy_per_class}});
    else
      datasets.push_back({{"name", d.name}, {"root", d.root.string()}});
  }
  std::vector<std::string> strategies;
  for (auto s : plan.strategies) strategies.emplace_back(strategy_name(s));
  return {{"run_id", plan.run_id},
          {"datasets", datasets},
          {"strategies", strategies},
          {"image_size", plan.image_size},
          {"test_fraction", plan.test_fraction},
          {"classifier", plan.classifier},
          {"train", train_to_json(plan.train)},
          {"adapt", train_to_json(plan.adapt)},
          {"gan",
           {{"lambda_gp", plan.gan.lambda_gp},
            {"n_critic", plan.gan.n_critic},
            {"batch_size", plan.gan.batch_size},
            {"epochs", plan.gan.epochs},
            {"learning_rate", plan.gan.optimizer.learning_rate},
            {"beta1", plan.gan.optimizer.beta1},
            {"beta2", plan.gan.optimizer.beta2},
            {"noise_dim", plan.gan.noise_dim},
            {"generator", plan.gan.generator},
            {"critic", plan.gan.critic}}},
          {"qa", plan.qa},
          {"synthetic_per_class", plan.synthetic_per_class},
          {"replications", plan.replications},
          {"base_seed", plan.base_seed}};
}

PipelinePlan plan_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  static const std::set<std::string> known = {"run_id", "datasets", "strategies", "image_size", "test_fraction",
                                              "classifier", "train", "adapt", "gan", "qa", "synthetic_per_class",
                                              "replications", "base_seed"};
  if (!j.is_object()) throw ValidationError("plan must be a mapping");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ValidationError("unknown plan key '" + key + "'");
  try {
    PipelinePlan p;
    p.run_id = j.value("run_id", p.run_id);
    for (const auto& d : j.at("datasets")) {
      DatasetSource src;
      src.name = d.at("name").get<std::string>();
      if (d.contains("toy")) {
        src.toy_domain = d.at("toy").get<int>();
        src.toy_per_class = d.value("per_class", src.toy_per_class);
      } else {
        fs::path root = d.at("root").get<std::string>();
        src.root = root.is_relative() && !base_dir.empty() ? base_dir / root : root;
      }
      p.datasets.push_back(std::move(src));
    }
    if (j.contains("strategies")) {
      p.strategies.clear();
      for (const auto& s : j.at("strategies")) {
        const auto name = s.get<std::string>();
        const auto strategy = strategy_from_name(name);
        if (!strategy) throw ValidationError("unknown strategy '" + name + "'");
        p.strategies.push_back(*strategy);
      }
    }
    p.image_size = j.value("image_size", p.image_size);
    p.test_fraction = j.value("test_fraction", p.test_fraction);
    if (j.contains("classifier")) p.classifier = j.at("classifier").get<ClassifierArch>();
    if (j.contains("train")) p.train = train_from_json(j.at("train"), p.train);
    p.adapt = j.contains("adapt") ? train_from_json(j.at("adapt"), p.train) : p.train;
    if (j.contains("gan")) {
      const auto& g = j.at("gan");
      p.gan.lambda_gp = g.value("lambda_gp", p.gan.lambda_gp);
      p.gan.n_critic = g.value("n_critic", p.gan.n_critic);
      p.gan.batch_size = g.value("batch_size", p.gan.batch_size);
      p.gan.epochs = g.value("epochs", p.gan.epochs);
      p.gan.optimizer.learning_rate = g.value("learning_rate", p.gan.optimizer.learning_rate);
      p.gan.optimizer.beta1 = g.value("beta1", p.gan.optimizer.beta1);
      p.gan.optimizer.beta2 = g.value("beta2", p.gan.optimizer.beta2);
      p.gan.noise_dim = g.value("noise_dim", p.gan.noise_dim);
      if (g.contains("generator")) p.gan.generator = g.at("generator").get<GeneratorArch>();
      if (g.contains("critic")) p.gan.critic = g.at("critic").get<CriticArch>();
    }
    if (j.contains("qa")) p.qa = j.at("qa").get<QaConfig>();
    p.synthetic_per_class = j.value("synthetic_per_class", p.synthetic_per_class);
    p.replications = j.value("replications", p.replications);
    p.base_seed = j.value("base_seed", p.base_seed);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed plan: ") + e.what());
  }
}

PipelinePlan parse_plan_yaml(const std::string& text, const fs::path& base_dir) {
  YAML::Node node;
  try {
    node = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("plan is not valid YAML: ") + e.what());
  }
  return plan_from_json(yaml_to_json(node), base_dir);
}

PipelinePlan load_plan(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ValidationError("plan file " + path.string() + " does not exist");
  return parse_plan_yaml(io::read_file(path), fs::absolute(path).parent_path());
}

PreparedDataset prepare_dataset(const PipelinePlan& plan, std::size_t index) {
  const auto& src = plan.datasets.at(index);
  Dataset all = src.toy_domain
                    ? toy::make_domain(*src.toy_domain, src.toy_per_class, plan.image_size,
                                       derive_seed(plan.base_seed, "toy-domain", static_cast<std::uint64_t>(index)))
                    : load_image_dataset(src.root, plan.image_size, src.name);
  all.name = src.name;
  auto [train, test] = split_dataset(all, plan.test_fraction, derive_seed(plan.base_seed, "split", index));
  return {src.name, std::move(train), std::move(test)};
}

std::vector<PreparedDataset> prepare_datasets(const PipelinePlan& plan) {
  std::vector<PreparedDataset> out;
  for (std::size_t i = 0; i < plan.datasets.size(); ++i) out.push_back(prepare_dataset(plan, i));
  return out;
}

Dataset SyntheticEntry::raw() const {
  Dataset ds;
  ds.name = dataset + "/synthetic-raw";
  ds.split = Split::train;
  for (const auto& c : classes)
    for (const auto& img : c.candidates) {
      if (ds.image_size == 0) ds.image_size = static_cast<int>(img.pixels.rows());
      ds.samples.push_back({img, 1.0});
    }
  return ds;
}

Dataset SyntheticEntry::accepted() const {
  Dataset ds;
  ds.name = dataset + "/synthetic-qa";
  ds.split = Split::train;
  for (const auto& c : classes)
    for (const auto& s : c.accepted) {
      if (ds.image_size == 0) ds.image_size = static_cast<int>(s.image.pixels.rows());
      ds.samples.push_back(s);
    }
  return ds;
}

std::string SyntheticEntry::manifest() const {
  std::string out = manifest_csv(accepted());
  for (const auto& c : classes) {
    std::string pixels;
    for (const auto& img : c.candidates)
      pixels.append(reinterpret_cast<const char*>(img.pixels.data()),
                    static_cast<std::size_t>(img.pixels.size()) * sizeof(float));
    out += fmt::format("# {} generator={} seed={} candidates={} sha256={}\n", class_name(c.label), c.generator_id,
                       c.seed, c.candidates.size(), io::sha256_hex(pixels));
  }
  return out;
}

const SyntheticEntry& SyntheticCollection::at(const std::string& dataset) const {
  const auto it = entries.find(dataset);
  if (it == entries.end()) throw ValidationError("no synthetic samples for dataset '" + dataset + "'");
  return it->second;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<long>(jobs, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

OfflineHooks default_offline_hooks(const PipelinePlan& plan) {
  OfflineHooks hooks;
  hooks.train_classifier = [plan](const Dataset& train, std::uint64_t seed) {
    auto model = build_classifier<float>(kNumClasses, plan.image_size, plan.classifier, derive_seed(seed, "init"));
    TrainConfig cfg = plan.train;
    cfg.scope = TrainableScope::all;
    cfg.seed = derive_seed(seed, "train");
    auto [trained, log] = train_classifier(std::move(model), train, cfg);
    return std::shared_ptr<const ImageClassifier>(std::make_shared<ClassifierModel>(std::move(trained)));
  };
  hooks.train_generator = [plan](const std::string& dataset, EmotionClass label,
                                 const std::vector<LabeledImage>& samples, std::uint64_t seed) {
    GanConfig cfg = plan.gan;
    cfg.seed = seed;
    auto [gen, log] = train_wgangp_for_class<float>(samples, cfg);
    gen.set_id(dataset + "/" + std::string(class_name(label)));
    return std::shared_ptr<const ImageGenerator>(std::make_shared<GeneratorModel>(std::move(gen)));
  };
  return hooks;
}

OfflineModels train_offline_models(const std::vector<const Dataset*>& datasets, const PipelinePlan& plan,
                                   const OfflineHooks& hooks) {
  OfflineModels out;
  for (const Dataset* ds : datasets) {
    try {
      if (hooks.log) hooks.log(fmt::format("offline: training classifier for {}", ds->name));
      auto classifier = hooks.train_classifier(*ds, derive_seed(plan.base_seed, "classifier/" + ds->name));
      std::vector<std::shared_ptr<const ImageGenerator>> generators(kNumClasses);
      parallel_for(kNumClasses, hooks.jobs, [&](std::size_t c) {
        const EmotionClass label = class_from_id(static_cast<int>(c));
        if (hooks.log) hooks.log(fmt::format("offline: training generator {}/{}", ds->name, class_name(label)));
        generators[c] = hooks.train_generator(ds->name, label, ds->images_of(label),
                                              derive_seed(plan.base_seed, "gan/" + ds->name, c));
        if (!generators[c] || generators[c]->class_tag() != label)
          throw ValidationError(fmt::format("generator for {}/{} is missing or mislabelled", ds->name,
                                            class_name(label)));
      });
      out.classifiers[ds->name] = std::move(classifier);
      out.generators[ds->name] = std::move(generators);
    } catch (const std::exception& e) {
      out.failures[ds->name] = e.what();
      if (hooks.log) hooks.log(fmt::format("offline: {} failed: {}", ds->name, e.what()));
    }
  }
  return out;
}

SyntheticCollection synthesize_collection(const OfflineModels& models, const PipelinePlan& plan,
                                          int synthetic_per_class, int replication, int jobs) {
  if (synthetic_per_class < 1) throw ValidationError("synthetic_per_class must be at least 1");
  SyntheticCollection collection;
  const std::uint64_t seed = plan.base_seed + static_cast<std::uint64_t>(replication);
  for (const auto& [name, generators] : models.generators) {
    const auto classifier = models.classifiers.at(name);
    SyntheticEntry entry;
    entry.dataset = name;
    entry.replication = replication;
    entry.classes.resize(generators.size());
    parallel_for(generators.size(), jobs, [&](std::size_t c) {
      auto& set = entry.classes[c];
      set.label = generators[c]->class_tag();
      set.generator_id = generators[c]->id();
      set.seed = derive_seed(seed, "synthesize/" + name, c);
      set.replication = replication;
      set.candidates = generate_samples(*generators[c], synthetic_per_class, set.seed);
    });
    for (auto& set : entry.classes) {
      auto [accepted, report] = qa_filter(*classifier, set.candidates, plan.qa);
      set.accepted = std::move(accepted);
      const auto c = static_cast<std::size_t>(class_id(set.label));
      entry.report.classes[c] = report.classes[c];
    }
    collection.entries.emplace(name, std::move(entry));
  }
  return collection;
}

int largest_class_count(const Dataset& ds) {
  const auto counts = ds.class_counts();
  return *std::max_element(counts.begin(), counts.end());
}

OfflineResult run_offline_stage(const std::vector<const Dataset*>& datasets, const PipelinePlan& plan,
                                const OfflineHooks& hooks) {
  if (datasets.empty()) throw ValidationError("offline stage needs at least one dataset");
  OfflineResult result;
  result.models = train_offline_models(datasets, plan, hooks);
  const int per_class =
      plan.synthetic_per_class > 0 ? plan.synthetic_per_class : largest_class_count(*datasets.front());
  result.collection = synthesize_collection(result.models, plan, per_class, 0, hooks.jobs);
  return result;
}

Dataset build_training_set(Strategy strategy, const std::vector<PreparedDataset>& sequence, std::size_t step,
                           const SyntheticCollection& collection) {
  if (step < 1 || step >= sequence.size())
    throw ValidationError(fmt::format("adaptation step {} outside 1..{}", step, sequence.size() - 1));
  const Dataset& target = sequence[step].train;
  switch (strategy) {
    case Strategy::current_model: return Dataset{target.name, Split::train, target.image_size, {}};
    case Strategy::fine_tune: return target;
    case Strategy::joint: {
      Dataset out = sequence[0].train;
      for (std::size_t k = 1; k <= step; ++k) out = unify_datasets(out, sequence[k].train);
      out.name = "joint:" + target.name;
      return out;
    }
    case Strategy::ecgr:
    case Strategy::ecgr_qa:
    case Strategy::ecgr_wqa: {
      Dataset out = target;
      for (std::size_t k = 0; k < step; ++k) {
        const SyntheticEntry& entry = collection.at(sequence[k].name);
        Dataset synthetic;
        if (strategy == Strategy::ecgr) {
          synthetic = entry.raw();
        } else {
          synthetic = entry.accepted();
          if (strategy == Strategy::ecgr_qa) synthetic.samples = strip_weights(std::move(synthetic.samples));
        }
        if (synthetic.empty()) continue;
        out = unify_datasets(out, synthetic);
      }
      out.name = std::string(strategy_name(strategy)) + ":" + target.name;
      return out;
    }
  }
  throw ValidationError("unknown strategy");
}

ContinualRunResult run_continual_stage(const ClassifierModel& source, const std::vector<PreparedDataset>& sequence,
                                       const SyntheticCollection& collection, Strategy strategy,
                                       const PipelinePlan& plan, std::uint64_t seed, int replication) {
  if (sequence.size() < 2) throw ValidationError("continual stage needs at least 2 datasets");
  if (uses_synthetic(strategy))
    for (std::size_t k = 0; k + 1 < sequence.size(); ++k) (void)collection.at(sequence[k].name);

  ContinualRunResult result;
  result.strategy = strategy;
  result.seed = seed;
  result.replication = replication;
  for (const auto& d : sequence) result.sequence.push_back(d.name);

  ClassifierModel model = source;
  result.steps.push_back({evaluate_classifier(model, sequence[0].test)});
  for (std::size_t k = 1; k < sequence.size(); ++k) {
    const Dataset train_set = build_training_set(strategy, sequence, k, collection);
    result.training_set_sizes.push_back(train_set.size());
    if (strategy != Strategy::current_model) {
      TrainConfig cfg = plan.adapt;
      cfg.scope = strategy == Strategy::fine_tune ? TrainableScope::fc_only : TrainableScope::all;
      cfg.seed = derive_seed(seed, std::string("continual/") + std::string(strategy_name(strategy)), k);
      auto [trained, log] = train_classifier(std::move(model), train_set, cfg);
      model = std::move(trained);
    }
    std::vector<StepMetrics> metrics;
    for (std::size_t d = 0; d <= k; ++d) metrics.push_back(evaluate_classifier(model, sequence[d].test));
    result.steps.push_back(std::move(metrics));
  }
  return result;
}

std::vector<ContinualRunResult> replicate(const std::function<ContinualRunResult(int, std::uint64_t)>& run,
                                          int replications, std::uint64_t base_seed, int jobs) {
  if (replications < 1) throw ValidationError("replications must be at least 1");
  std::vector<ContinualRunResult> results(static_cast<std::size_t>(replications));
  parallel_for(results.size(), jobs, [&](std::size_t r) {
    const auto seed = base_seed + r;
    try {
      results[r] = run(static_cast<int>(r), seed);
    } catch (const std::exception& e) {
      results[r] = ContinualRunResult{};
      results[r].seed = seed;
      results[r].replication = static_cast<int>(r);
      results[r].error = e.what();
    }
  });
  return results;
}

}  // namespace ecgr
