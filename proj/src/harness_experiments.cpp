#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cls/errors.hpp"
#include "cls/harness.hpp"
#include "json.hpp"

namespace cls {

using nlohmann::json;
namespace fs = std::filesystem;

double SeedResult::final_eval(const std::string& set) const {
  for (auto it = evaluations.rbegin(); it != evaluations.rend(); ++it)
    if (it->set == set) return it->result.mean_reward;
  throw ContractViolation("no evaluation of set '" + set + "'");
}

double SeedResult::initial_eval(const std::string& set) const {
  for (const auto& e : evaluations)
    if (e.set == set) return e.result.mean_reward;
  throw ContractViolation("no evaluation of set '" + set + "'");
}

double SeedResult::eval_at(const std::string& set, std::uint64_t step) const {
  for (const auto& e : evaluations)
    if (e.set == set && e.step == step) return e.result.mean_reward;
  throw ContractViolation("no evaluation of set '" + set + "' at step " + std::to_string(step));
}

std::vector<const SeedResult*> ExperimentResult::arm(const std::string& name) const {
  std::vector<const SeedResult*> out;
  for (const auto& r : runs)
    if (r.arm == name) out.push_back(&r);
  return out;
}

namespace {

/// Runs tasks on up to `workers` threads; results keep task order. The first
/// exception is rethrown once every worker has stopped.
std::vector<SeedResult> run_parallel(std::size_t tasks, std::size_t workers,
                                     const std::function<SeedResult(std::size_t)>& fn) {
  std::vector<SeedResult> out(tasks);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, tasks);
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks; ++i) out[i] = fn(i);
    return out;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next == tasks || error) return;
        i = next++;
      }
      try {
        out[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

TrainingOptions training_options(const ExperimentConfig& c, std::uint64_t steps, std::uint64_t seed) {
  TrainingOptions o;
  o.batch_steps = steps;
  o.batch_size = c.batch_size;
  o.epsilon = c.epsilon;
  o.gamma = c.gamma;
  o.seed = seed;
  o.eval_every = c.eval_every;
  o.eval_steps = c.eval_steps;
  o.eval_seed = c.eval_seed;
  return o;
}

std::optional<double> optimum_of(const ClassCatalog& catalog, const LtmOracle& oracle) {
  if (!oracle.fixture()) return std::nullopt;
  return optimal_policy_oracle(catalog, *oracle.fixture()).reward_per_step;
}

fs::path metrics_file(const ExperimentConfig& c, const std::string& experiment, const std::string& arm,
                      std::uint64_t seed) {
  return fs::path(c.out_dir) / experiment / (arm + "_seed" + std::to_string(seed) + ".jsonl");
}

SeedResult collect(std::uint64_t seed, std::string arm, const TrainingSummary& s, const QEstimator& est) {
  SeedResult r;
  r.seed = seed;
  r.arm = std::move(arm);
  r.evaluations = s.evaluations;
  r.transitions = s.transitions;
  r.parameter_updates = est.parameter_updates();
  return r;
}

/// Forwards records and refuses any training step on a class outside the
/// allowed set.
class ClassAudit : public TrainingObserver {
 public:
  ClassAudit(TrainingObserver& next, const ClassCatalog& allowed) : next_(next), allowed_(allowed) {}
  void on_step(const StepRecord& r) override {
    if (!allowed_.contains(r.cls)) throw ContractViolation("training step on excluded class '" + r.cls + "'");
    next_.on_step(r);
  }
  void on_eval(const EvalRecord& r) override { next_.on_eval(r); }

 private:
  TrainingObserver& next_;
  const ClassCatalog& allowed_;
};

void write_summary(const ExperimentConfig& c, const ExperimentResult& r) {
  json runs = json::array();
  for (const auto& s : r.runs) {
    json finals = json::object();
    for (const auto& e : s.evaluations) finals[e.set] = e.result.mean_reward;
    runs.push_back({{"seed", s.seed},
                    {"arm", s.arm},
                    {"final", finals},
                    {"transitions", s.transitions},
                    {"parameter_updates", s.parameter_updates}});
  }
  const fs::path p = fs::path(c.out_dir) / r.experiment / "summary.json";
  fs::create_directories(p.parent_path());
  std::ofstream(p) << json{{"experiment", r.experiment}, {"estimator", c.estimator}, {"optimum", r.optimum},
                           {"runs", runs}}
                          .dump(2)
                   << '\n';
}

}  // namespace

ExperimentResult exp_train(const ExperimentConfig& config) {
  config.validate();
  const ClassCatalog catalog = config.original_catalog();
  ExperimentResult result;
  result.experiment = "train";
  if (auto opt = optimum_of(catalog, *make_oracle(config))) result.optimum["original"] = *opt;
  fs::create_directories(config.snapshots());

  result.runs = run_parallel(config.seeds.size(), config.workers, [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    const RunSeeds s(seed);
    auto oracle = make_oracle(config);
    auto est = make_estimator(config, std::make_shared<const Encoders>(s.encoders), seed);
    MetricsWriter w(metrics_file(config, "train", config.estimator, seed),
                    "train-" + config.estimator + "-seed" + std::to_string(seed), "train", config.estimator, seed,
                    config.log_steps);
    w.set_phase("pretrain");
    const TrainingSummary sum = run_training(*est, catalog, *oracle, training_options(config, config.default_steps(), s.training),
                                             {{"original", catalog}}, &w);
    est->save(snapshot_path(config, seed));
    return collect(seed, config.estimator, sum, *est);
  });
  for (auto seed : config.seeds) result.metrics_files.push_back(metrics_file(config, "train", config.estimator, seed));
  write_summary(config, result);
  return result;
}

ExperimentResult exp_fewshot(const ExperimentConfig& config) {
  config.validate();
  const ClassCatalog original = config.original_catalog();
  const ClassCatalog fresh = config.new_catalog();
  for (auto seed : config.seeds)
    if (!fs::exists(snapshot_path(config, seed)))
      throw ConfigError("missing snapshot " + snapshot_path(config, seed) + " (run train first)");
  ExperimentResult result;
  result.experiment = "fewshot";
  {
    auto oracle = make_oracle(config);
    if (auto opt = optimum_of(original, *oracle)) result.optimum["original"] = *opt;
    if (auto opt = optimum_of(fresh, *oracle)) result.optimum["new"] = *opt;
  }

  result.runs = run_parallel(config.seeds.size(), config.workers, [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    const RunSeeds s(seed);
    auto oracle = make_oracle(config);
    auto est = load_estimator(config, std::make_shared<const Encoders>(s.encoders), snapshot_path(config, seed));
    MetricsWriter w(metrics_file(config, "fewshot", config.estimator, seed),
                    "fewshot-" + config.estimator + "-seed" + std::to_string(seed), "fewshot", config.estimator, seed,
                    config.log_steps);
    w.set_phase("fewshot");
    ClassAudit audit(w, fresh);
    TrainingOptions o = training_options(config, config.fewshot_checkpoints.back(), s.fewshot);
    o.eval_at = config.fewshot_checkpoints;
    if (o.eval_at.front() != 0) o.eval_at.insert(o.eval_at.begin(), 0);
    const TrainingSummary sum = run_training(*est, fresh, *oracle, o, {{"original", original}, {"new", fresh}}, &audit);
    return collect(seed, config.estimator, sum, *est);
  });
  for (auto seed : config.seeds)
    result.metrics_files.push_back(metrics_file(config, "fewshot", config.estimator, seed));
  write_summary(config, result);
  return result;
}

ExperimentResult exp_zeroshot(const ExperimentConfig& config) {
  config.validate();
  struct Arm {
    std::string name, fixture;
    ClassCatalog train;
  };
  const ClassCatalog all = config.full_catalog();
  ClassCatalog withheld = all.without(config.zeroshot_withheld);
  if (config.keep_raptor_share) {
    double moved = 0.0;
    std::vector<std::string> kept;
    for (const auto& r : config.raptors) {
      if (withheld.contains(r))
        kept.push_back(r);
      else if (all.contains(r))
        moved += all.at(r).weight;
    }
    for (const auto& r : kept)
      withheld.set_weight(r, withheld.at(r).weight + moved / static_cast<double>(kept.size()));
  }
  const ClassCatalog raptors = ClassCatalog::garden().only(config.raptors);
  std::vector<Arm> arms{{"all", config.fixture, all}, {"withheld", config.fixture, withheld}};
  if (!config.negative_fixture.empty()) {
    arms.push_back({"negative-all", config.negative_fixture, all});
    arms.push_back({"negative-withheld", config.negative_fixture, withheld});
  }

  ExperimentResult result;
  result.experiment = "zeroshot";
  {
    auto oracle = make_oracle(config);
    if (auto opt = optimum_of(raptors, *oracle)) result.optimum["raptors"] = *opt;
    // Raptors share windows with the other birds, so the reachable value is
    // that of the best policy for the whole catalog, scored on raptors.
    if (oracle->fixture())
      result.optimum["raptors-in-context"] =
          optimal_policy_oracle(all, *oracle->fixture()).value.reward_per_step(config.raptors);
    if (!config.negative_fixture.empty() && !config.use_llm) {
      const FixtureTable neg = FixtureTable::load(config.negative_fixture);
      result.optimum["negative-raptors"] = optimal_policy_oracle(raptors, neg).reward_per_step;
      OracleOptions blind;
      blind.max_questions = 0;
      result.optimum["negative-answer-agnostic"] = optimal_policy_oracle(raptors, neg, blind).reward_per_step;
    }
  }

  const std::size_t n = config.seeds.size();
  result.runs = run_parallel(arms.size() * n, config.workers, [&](std::size_t i) {
    const Arm& arm = arms[i / n];
    const std::uint64_t seed = config.seeds[i % n];
    const RunSeeds s(seed);
    auto oracle = make_oracle(config, arm.fixture);
    auto est = make_estimator(config, std::make_shared<const Encoders>(s.encoders), seed);
    MetricsWriter w(metrics_file(config, "zeroshot", arm.name, seed),
                    "zeroshot-" + arm.name + "-seed" + std::to_string(seed), "zeroshot", arm.name, seed,
                    config.log_steps);
    w.set_phase("train");
    ClassAudit audit(w, arm.train);
    const TrainingSummary sum = run_training(*est, arm.train, *oracle,
                                             training_options(config, config.default_steps(), s.training),
                                             {{"raptors", raptors}}, &audit);
    return collect(seed, arm.name, sum, *est);
  });
  for (const auto& a : arms)
    for (auto seed : config.seeds) result.metrics_files.push_back(metrics_file(config, "zeroshot", a.name, seed));
  write_summary(config, result);
  return result;
}

ExperimentResult exp_streaming(const ExperimentConfig& config) {
  config.validate();
  if (config.estimator != "sdm") throw ConfigError("streaming runs only with the sdm estimator");
  const ClassCatalog catalog = config.original_catalog();
  const std::size_t wide = config.batch_size;
  ExperimentResult result;
  result.experiment = "streaming";
  if (auto opt = optimum_of(catalog, *make_oracle(config))) result.optimum["original"] = *opt;

  struct Arm {
    std::string name;
    std::size_t batch;
  };
  const std::vector<Arm> arms{{"batch" + std::to_string(wide), wide}, {"batch1", 1}};
  const std::size_t n = config.seeds.size();
  result.runs = run_parallel(arms.size() * n, config.workers, [&](std::size_t i) {
    const Arm& arm = arms[i / n];
    const std::uint64_t seed = config.seeds[i % n];
    const RunSeeds s(seed);
    auto oracle = make_oracle(config);
    auto est = make_estimator(config, std::make_shared<const Encoders>(s.encoders), seed);
    // Same number of transitions in both arms: batch-1 steps are scaled by
    // the wide batch size, and reported divided by it.
    const std::uint64_t scale = wide / arm.batch;
    TrainingOptions o = training_options(config, config.default_steps() * scale, s.training);
    o.batch_size = arm.batch;
    o.eval_every = config.eval_every * scale;
    MetricsWriter w(metrics_file(config, "streaming", arm.name, seed),
                    "streaming-" + arm.name + "-seed" + std::to_string(seed), "streaming", arm.name, seed,
                    config.log_steps);
    w.set_phase("train");
    w.set_step_scale(1.0 / static_cast<double>(scale));
    const TrainingSummary sum = run_training(*est, catalog, *oracle, o, {{"original", catalog}}, &w);
    return collect(seed, arm.name, sum, *est);
  });
  for (const auto& a : arms)
    for (auto seed : config.seeds) result.metrics_files.push_back(metrics_file(config, "streaming", a.name, seed));
  write_summary(config, result);
  return result;
}

ExperimentResult exp_eval(const ExperimentConfig& config) {
  config.validate();
  const ClassCatalog catalog = config.original_catalog();
  ExperimentResult result;
  result.experiment = "eval";
  if (auto opt = optimum_of(catalog, *make_oracle(config))) result.optimum["original"] = *opt;
  result.runs = run_parallel(config.seeds.size(), config.workers, [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    const RunSeeds s(seed);
    auto oracle = make_oracle(config);
    auto est = load_estimator(config, std::make_shared<const Encoders>(s.encoders), snapshot_path(config, seed));
    MetricsWriter w(metrics_file(config, "eval", config.estimator, seed),
                    "eval-" + config.estimator + "-seed" + std::to_string(seed), "eval", config.estimator, seed,
                    false);
    w.set_phase("eval-original");
    EvalRecord rec{0, "original", run_evaluation(*est, catalog, *oracle, config.eval_steps, config.eval_seed)};
    w.on_eval(rec);
    SeedResult r;
    r.seed = seed;
    r.arm = config.estimator;
    r.evaluations.push_back(rec);
    return r;
  });
  for (auto seed : config.seeds) result.metrics_files.push_back(metrics_file(config, "eval", config.estimator, seed));
  write_summary(config, result);
  return result;
}

// ---------------------------------------------------------------------------

std::vector<fs::path> export_plots(const fs::path& metrics_dir, const fs::path& out_dir) {
  if (!fs::is_directory(metrics_dir)) throw FormatError("metrics directory " + metrics_dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(metrics_dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  using Key = std::tuple<std::string, std::string, std::string, std::string, std::uint64_t>;
  std::map<std::string, std::map<Key, std::vector<double>>> tables;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto fail = [&](const std::string& why) {
        return FormatError(f.string() + ":" + std::to_string(line_no) + ": " + why);
      };
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw fail(e.what());
      }
      if (!j.is_object()) throw fail("record is not an object");
      if (!j.contains("eval_mean")) continue;
      try {
        const Key k{j.at("experiment").get<std::string>(), j.at("arm").get<std::string>(),
                    j.at("phase").get<std::string>(), j.at("set").get<std::string>(),
                    j.at("step").get<std::uint64_t>()};
        tables[std::get<0>(k)][k].push_back(j.at("eval_mean").get<double>());
      } catch (const json::exception& e) {
        throw fail(e.what());
      }
    }
  }

  const std::vector<std::pair<std::string, std::string>> figures{{"fewshot", "fig4_fewshot.csv"},
                                                                 {"train", "fig6_training.csv"},
                                                                 {"zeroshot", "fig7a_zeroshot.csv"},
                                                                 {"streaming", "fig7b_streaming.csv"}};
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& [experiment, name] : figures) {
    const fs::path p = out_dir / name;
    std::ofstream out(p);
    if (!out) throw FormatError("cannot write " + p.string());
    out << "experiment,arm,phase,set,step,runs,mean,sd\n";
    for (const auto& [k, v] : tables[experiment]) {
      double mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      std::ostringstream row;
      row.precision(10);
      row << std::get<0>(k) << ',' << std::get<1>(k) << ',' << std::get<2>(k) << ',' << std::get<3>(k) << ','
          << std::get<4>(k) << ',' << v.size() << ',' << mean << ',' << sd << '\n';
      out << row.str();
    }
    written.push_back(p);
  }
  return written;
}

}  // namespace cls
