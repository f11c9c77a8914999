// Command-line front end for the experiment harness.

#include <iostream>

#include "CLI11.hpp"
#include "cls/errors.hpp"
#include "cls/harness.hpp"
#include "json.hpp"

using namespace cls;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config, fixture, endpoint, model, out, estimator, snapshots, negative;
  std::vector<std::uint64_t> seeds;
  std::size_t batch_size = 0, workers = 0;
  std::uint64_t steps = 0, samples = 0;
  bool no_step_log = false;
  std::string fixture_out;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON experiment config");
  app->add_option("--seed", o.seeds, "Run seed (repeatable)");
  app->add_option("--fixture", o.fixture, "Fixture file for the long-term memory");
  app->add_option("--llm-endpoint", o.endpoint, "Use a live completion endpoint instead of a fixture");
  app->add_option("--llm-model", o.model, "Model name for the live endpoint");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--estimator", o.estimator, "sdm or mlp")->check(CLI::IsMember({"sdm", "mlp"}));
  app->add_option("--batch-size", o.batch_size, "Parallel episodes per step");
  app->add_option("--steps", o.steps, "Batch steps (0: experiment default)");
  app->add_option("--workers", o.workers, "Seeds run in parallel (0: one per core)");
  app->add_option("--snapshots", o.snapshots, "Snapshot directory");
  app->add_flag("--no-step-log", o.no_step_log, "Only write evaluation records");
}

ExperimentConfig build(ExperimentKind kind, const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig::from_json_text("{}") : ExperimentConfig::load(o.config);
  c.kind = kind;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.fixture.empty()) {
    c.fixture = o.fixture;
    c.use_llm = false;
  }
  if (!o.endpoint.empty()) {
    c.llm.base_url = o.endpoint;
    c.use_llm = true;
  }
  if (!o.model.empty()) c.llm.model = o.model;
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.estimator.empty()) c.estimator = o.estimator;
  if (o.batch_size) c.batch_size = o.batch_size;
  if (o.steps) c.batch_steps = o.steps;
  if (o.workers) c.workers = o.workers;
  if (!o.snapshots.empty()) c.snapshot_dir = o.snapshots;
  if (!o.negative.empty()) c.negative_fixture = o.negative;
  if (o.no_step_log) c.log_steps = false;
  if (o.samples) c.samples_per_entry = o.samples;
  if (!o.fixture_out.empty()) c.fixture_out = o.fixture_out;
  c.validate();
  return c;
}

void report(const ExperimentResult& r) {
  json runs = json::array();
  for (const auto& s : r.runs) {
    json finals = json::object();
    for (const auto& e : s.evaluations) finals[e.set] = e.result.mean_reward;
    runs.push_back({{"seed", s.seed}, {"arm", s.arm}, {"final", finals}});
  }
  std::cout << json{{"experiment", r.experiment}, {"optimum", r.optimum}, {"runs", runs}}.dump(2) << '\n';
}

int run_oracle(const ExperimentConfig& c) {
  const ClassCatalog catalog = c.original_catalog();
  const FixtureTable table = FixtureTable::load(c.fixture);
  const OracleResult r = optimal_policy_oracle(catalog, table);
  const OracleResult d = discounted_optimal_policy(catalog, table, c.gamma);
  json policy = json::array();
  for (const auto& [window, action] : r.policy) policy.push_back({{"window", window}, {"action", action_name(action)}});
  json per_class = json::object();
  for (const auto& [name, v] : r.value.per_class) per_class[name] = {{"reward", v.reward}, {"length", v.length}};
  std::cout << json{{"reward_per_step", r.reward_per_step},
                    {"discounted_policy_reward_per_step", d.reward_per_step},
                    {"per_class", per_class},
                    {"policy", policy}}
                   .dump(2)
            << '\n';
  return 0;
}

int run_gen_fixture(const ExperimentConfig& c) {
  if (!c.use_llm) throw ConfigError("gen-fixture needs --llm-endpoint, LTM_ENDPOINT or oracle \"llm\" in the config");
  LlmClient client(c.llm);
  FixtureGenerationOptions opt;
  opt.samples_per_entry = c.samples_per_entry;
  opt.parallelism = c.llm_parallelism;
  opt.seed = c.seeds.front();
  const FixtureTable t =
      generate_fixture(client, ClassCatalog::garden().names(), fixture_questions(), opt, c.fixture_out + ".partial");
  t.save(c.fixture_out);
  std::cout << "wrote " << c.fixture_out << " (" << client.requests_sent() << " requests)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complementary-memory reinforcement learning experiments"};
  app.require_subcommand(1);
  Overrides o;
  std::string metrics_dir, csv_dir;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "Pretrain on the original classes and save snapshots"},
      {"fewshot", "Train stored snapshots on the withheld classes only"},
      {"zeroshot", "Compare training with and without the withheld raptors"},
      {"streaming", "Compare batch 1 with the wide batch at matched exposure"},
      {"eval", "Greedy evaluation of stored snapshots"},
      {"gen-fixture", "Build a fixture by sampling a live endpoint"},
      {"oracle", "Optimal reward per step and policy for a fixture"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(s, o);
    subs[name] = s;
  }
  subs["zeroshot"]->add_option("--negative-fixture", o.negative, "Control fixture for extra arms");
  subs["gen-fixture"]->add_option("--samples", o.samples, "Samples per (class, question)");
  subs["gen-fixture"]->add_option("--fixture-out", o.fixture_out, "Where to write the table");
  CLI::App* plots = app.add_subcommand("export-plots", "Aggregate metrics across seeds into CSV tables");
  plots->add_option("--metrics", metrics_dir, "Metrics directory")->required();
  plots->add_option("--out", csv_dir, "CSV output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (plots->parsed()) {
      for (const auto& p : export_plots(metrics_dir, csv_dir)) std::cout << p.string() << '\n';
      return 0;
    }
    for (const auto& [name, s] : subs) {
      if (!s->parsed()) continue;
      const ExperimentConfig c = build(parse_kind(name), o);
      switch (c.kind) {
        case ExperimentKind::Train: report(exp_train(c)); break;
        case ExperimentKind::FewShot: report(exp_fewshot(c)); break;
        case ExperimentKind::ZeroShot: report(exp_zeroshot(c)); break;
        case ExperimentKind::Streaming: report(exp_streaming(c)); break;
        case ExperimentKind::Eval: report(exp_eval(c)); break;
        case ExperimentKind::GenFixture: return run_gen_fixture(c);
        case ExperimentKind::Oracle: return run_oracle(c);
      }
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const OracleUnavailable& e) {
    std::cerr << "oracle unavailable: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
