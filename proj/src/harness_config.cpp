#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "cls/errors.hpp"
#include "cls/harness.hpp"
#include "json.hpp"

namespace cls {

using nlohmann::json;

namespace {

const std::map<std::string, ExperimentKind>& kinds() {
  static const std::map<std::string, ExperimentKind> k{
      {"train", ExperimentKind::Train},         {"fewshot", ExperimentKind::FewShot},
      {"zeroshot", ExperimentKind::ZeroShot},   {"streaming", ExperimentKind::Streaming},
      {"eval", ExperimentKind::Eval},           {"gen-fixture", ExperimentKind::GenFixture},
      {"oracle", ExperimentKind::Oracle}};
  return k;
}

/// Reads only the listed keys of an object and rejects anything else, so a
/// misspelt option fails instead of silently keeping its default.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + where(key) + "': " + e.what());
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown option '" + where(k) + "'");
  }

 private:
  std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

std::string kind_name(ExperimentKind k) {
  for (const auto& [name, kind] : kinds())
    if (kind == k) return name;
  return "?";
}

ExperimentKind parse_kind(const std::string& s) {
  const auto it = kinds().find(s);
  if (it == kinds().end()) throw ConfigError("unknown experiment '" + s + "'");
  return it->second;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  // Environment variables are fallbacks; explicit settings win.
  c.llm.apply_environment();
  Section root(j, "");
  std::string kind = kind_name(c.kind);
  root.get("experiment", kind);
  c.kind = parse_kind(kind);

  std::string oracle = "fixture";
  root.get("oracle", oracle);
  if (oracle != "fixture" && oracle != "llm") throw ConfigError("config: oracle must be 'fixture' or 'llm'");
  c.use_llm = oracle == "llm";
  root.get("fixture", c.fixture);
  root.get("deterministic_answers", c.deterministic_answers);
  if (auto s = root.child("llm")) {
    s->get("endpoint", c.llm.base_url);
    s->get("model", c.llm.model);
    s->get("generate_path", c.llm.generate_path);
    s->get("timeout_seconds", c.llm.timeout_seconds);
    s->get("temperature", c.llm.temperature);
    s->get("max_retries", c.llm.max_retries);
    s->get("prompt_template", c.llm.answer_template);
    s->finish();
  }
  root.get("weights", c.weights);
  root.get("withheld", c.withheld);
  root.get("seeds", c.seeds);
  root.get("workers", c.workers);
  root.get("estimator", c.estimator);
  root.get("out_dir", c.out_dir);
  root.get("snapshot_dir", c.snapshot_dir);
  root.get("log_steps", c.log_steps);
  if (auto s = root.child("agent")) {
    s->get("batch_size", c.batch_size);
    s->get("epsilon", c.epsilon);
    s->get("gamma", c.gamma);
    s->finish();
  }
  if (auto s = root.child("sdm")) {
    s->get("capacity", c.sdm.capacity);
    s->get("clique_size", c.sdm.clique_size);
    s->get("learning_rate", c.sdm.learning_rate);
    s->finish();
  }
  if (auto s = root.child("mlp")) {
    s->get("hidden", c.mlp.hidden);
    s->get("learning_rate", c.mlp.learning_rate);
    s->get("dropout", c.mlp.dropout);
    s->get("leaky_slope", c.mlp.leaky_slope);
    s->get("layer_norm", c.mlp.layer_norm);
    s->get("layer_norm_epsilon", c.mlp.layer_norm_epsilon);
    s->get("beta1", c.mlp.beta1);
    s->get("beta2", c.mlp.beta2);
    s->get("adam_epsilon", c.mlp.adam_epsilon);
    s->finish();
  }
  if (auto s = root.child("schedule")) {
    s->get("batch_steps", c.batch_steps);
    s->get("eval_every", c.eval_every);
    s->get("eval_steps", c.eval_steps);
    s->get("eval_seed", c.eval_seed);
    s->get("fewshot_checkpoints", c.fewshot_checkpoints);
    s->finish();
  }
  if (auto s = root.child("zeroshot")) {
    s->get("raptors", c.raptors);
    s->get("withheld", c.zeroshot_withheld);
    s->get("negative_fixture", c.negative_fixture);
    s->get("keep_raptor_share", c.keep_raptor_share);
    s->finish();
  }
  if (auto s = root.child("gen_fixture")) {
    s->get("samples_per_entry", c.samples_per_entry);
    s->get("parallelism", c.llm_parallelism);
    s->get("out", c.fixture_out);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void ExperimentConfig::validate() const {
  if (estimator != "sdm" && estimator != "mlp") throw ConfigError("estimator must be 'sdm' or 'mlp'");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  if (!use_llm && fixture.empty()) throw ConfigError("a fixture path is required unless the llm oracle is used");
  if (use_llm) llm.validate();
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");

  const ClassCatalog g = ClassCatalog::garden();
  for (const auto& [name, w] : weights) {
    if (!g.contains(name)) throw ConfigError("weight for unknown class '" + name + "'");
    if (!(w > 0.0)) throw ConfigError("weight for '" + name + "' must be positive");
  }
  auto check_classes = [&](const std::vector<std::string>& names, const char* what) {
    for (const auto& n : names)
      if (!g.contains(n)) throw ConfigError(std::string(what) + ": unknown class '" + n + "'");
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
      throw ConfigError(std::string(what) + ": duplicate class");
  };
  check_classes(withheld, "withheld");
  check_classes(raptors, "raptors");
  check_classes(zeroshot_withheld, "zeroshot.withheld");
  if (withheld.size() == g.size()) throw ConfigError("withheld: nothing left to train on");
  if (keep_raptor_share && std::all_of(raptors.begin(), raptors.end(), [&](const std::string& r) {
        return std::find(zeroshot_withheld.begin(), zeroshot_withheld.end(), r) != zeroshot_withheld.end();
      }))
    throw ConfigError("zeroshot.keep_raptor_share needs at least one raptor that is not withheld");

  TrainingOptions t;
  t.batch_size = batch_size;
  t.epsilon = epsilon;
  t.gamma = gamma;
  t.eval_at = fewshot_checkpoints;
  t.validate();
  if (fewshot_checkpoints.empty()) throw ConfigError("few-shot checkpoints must not be empty");
  if (eval_steps == 0) throw ConfigError("eval_steps must be positive");
  if (sdm.clique_size == 0 || sdm.clique_size > sdm.capacity) throw ConfigError("sdm: clique size out of range");
  if (!(sdm.learning_rate > 0.0 && sdm.learning_rate <= 1.0)) throw ConfigError("sdm: learning rate must lie in (0, 1]");
  MlpConfig m = mlp;
  m.input_dim = 800;
  m.validate();
  if (samples_per_entry == 0) throw ConfigError("gen_fixture: samples_per_entry must be positive");
}

std::string ExperimentConfig::snapshots() const {
  return snapshot_dir.empty() ? (std::filesystem::path(out_dir) / "snapshots").string() : snapshot_dir;
}

std::uint64_t ExperimentConfig::default_steps() const {
  if (batch_steps) return batch_steps;
  switch (kind) {
    case ExperimentKind::Train:
      return estimator == "mlp" ? 12000 : 6000;
    case ExperimentKind::FewShot:
      return fewshot_checkpoints.back();
    default:
      return 6000;
  }
}

namespace {

ClassCatalog weighted(ClassCatalog c, const std::map<std::string, double>& weights) {
  for (const auto& [name, w] : weights)
    if (c.contains(name)) c.set_weight(name, w);
  return c;
}

}  // namespace

ClassCatalog ExperimentConfig::original_catalog() const {
  return weighted(ClassCatalog::garden().without(withheld), weights);
}

ClassCatalog ExperimentConfig::new_catalog() const {
  if (withheld.empty()) throw ConfigError("no withheld classes to train on");
  return weighted(ClassCatalog::garden().only(withheld), weights);
}

ClassCatalog ExperimentConfig::full_catalog() const { return weighted(ClassCatalog::garden(), weights); }

std::unique_ptr<LtmOracle> make_oracle(const ExperimentConfig& config, const std::string& fixture_path) {
  if (config.use_llm) return std::make_unique<LlmOracle>(config.llm);
  return std::make_unique<FixtureOracle>(FixtureTable::load(fixture_path), config.deterministic_answers);
}

std::unique_ptr<LtmOracle> make_oracle(const ExperimentConfig& config) { return make_oracle(config, config.fixture); }

RunSeeds::RunSeeds(std::uint64_t seed)
    : encoders(derive_seed(seed, 10)),
      memory(derive_seed(seed, 11)),
      network(derive_seed(seed, 12)),
      training(derive_seed(seed, 13)),
      fewshot(derive_seed(seed, 14)) {}

std::unique_ptr<QEstimator> make_estimator(const ExperimentConfig& config, std::shared_ptr<const Encoders> encoders,
                                           std::uint64_t seed) {
  const RunSeeds s(seed);
  if (config.estimator == "sdm") return std::make_unique<SdmQEstimator>(std::move(encoders), config.sdm, s.memory);
  MlpConfig m = config.mlp;
  m.input_dim = 800;
  m.output_dim = 1;
  m.seed = s.network;
  return std::make_unique<MlpQEstimator>(std::move(encoders), m, config.batch_size);
}

std::unique_ptr<QEstimator> load_estimator(const ExperimentConfig& config, std::shared_ptr<const Encoders> encoders,
                                           const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing snapshot " + path + " (run train first)");
  if (config.estimator == "sdm") return std::make_unique<SdmQEstimator>(std::move(encoders), SparseMemory::load(path));
  return std::make_unique<MlpQEstimator>(std::move(encoders), Mlp::load(path), config.batch_size);
}

std::string snapshot_path(const ExperimentConfig& config, std::uint64_t seed) {
  return (std::filesystem::path(config.snapshots()) / (config.estimator + "_seed" + std::to_string(seed) + ".snap"))
      .string();
}

// ---------------------------------------------------------------------------

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::string run_id, std::string experiment,
                             std::string arm, std::uint64_t seed, bool log_steps)
    : path_(path),
      run_id_(std::move(run_id)),
      experiment_(std::move(experiment)),
      arm_(std::move(arm)),
      seed_(seed),
      log_steps_(log_steps) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, std::ios::trunc);
  if (!out_) throw ConfigError("cannot write metrics file " + path_.string());
}

MetricsWriter::~MetricsWriter() { out_.flush(); }

void MetricsWriter::write(const std::string& line) { out_ << line << '\n'; }

void MetricsWriter::flush() { out_.flush(); }

void MetricsWriter::on_step(const StepRecord& r) {
  if (!log_steps_) return;
  json j{{"run_id", run_id_},
         {"experiment", experiment_},
         {"arm", arm_},
         {"seed", seed_},
         {"phase", phase_},
         {"step", r.step},
         {"lane", r.lane},
         {"episode", r.episode},
         {"action", action_name(r.action)},
         {"reward", r.reward},
         {"terminal", r.terminal},
         {"class", r.cls}};
  write(j.dump());
}

void MetricsWriter::on_eval(const EvalRecord& r) {
  json per_class = json::object();
  for (const auto& [name, c] : r.result.per_class)
    per_class[name] = {{"reward", c.reward}, {"steps", c.steps}, {"episodes", c.episodes}};
  json j{{"run_id", run_id_},
         {"experiment", experiment_},
         {"arm", arm_},
         {"seed", seed_},
         {"phase", phase_},
         {"set", r.set},
         {"step", static_cast<std::uint64_t>(static_cast<double>(r.step) * step_scale_)},
         {"batch_step", r.step},
         {"eval_mean", r.result.mean_reward},
         {"eval_steps", r.result.steps},
         {"episodes", r.result.episodes},
         {"per_class", per_class}};
  write(j.dump());
  flush();
}

}  // namespace cls
