#pragma once

// Experiment runner: configuration, seeded multi-run experiments, JSON-lines
// metrics, estimator snapshots and CSV aggregation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cls/agent.hpp"
#include "cls/ltm.hpp"

namespace cls {

enum class ExperimentKind { Train, FewShot, ZeroShot, Streaming, Eval, GenFixture, Oracle };

std::string kind_name(ExperimentKind k);
ExperimentKind parse_kind(const std::string& s);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Train;

  // Long-term memory: a fixture file, or a live endpoint when use_llm is set.
  std::string fixture = "data/desk_fixture.json";
  bool deterministic_answers = true;
  bool use_llm = false;
  LlmEndpointConfig llm;

  // Catalog.
  std::map<std::string, double> weights;
  std::vector<std::string> withheld{"Deadly nightshade", "Fly agaric mushroom"};

  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7};
  std::size_t workers = 0;  // 0: one per hardware thread
  std::string estimator = "sdm";
  std::string out_dir = "runs";
  /// Where train writes and fewshot/eval read estimator snapshots; defaults
  /// to <out_dir>/snapshots.
  std::string snapshot_dir;
  bool log_steps = true;

  // Agent.
  std::size_t batch_size = 16;
  double epsilon = 0.1;
  double gamma = 0.9;
  SdmEstimatorConfig sdm;
  MlpConfig mlp;

  // Schedules. batch_steps 0 picks the per-experiment default.
  std::uint64_t batch_steps = 0;
  std::uint64_t eval_every = 250;
  std::uint64_t eval_steps = 1000;
  std::uint64_t eval_seed = 1;
  std::vector<std::uint64_t> fewshot_checkpoints{10, 20, 40, 80, 160, 320, 640, 1280};

  // Zero-shot protocol.
  std::vector<std::string> raptors{"Hawk", "Eagle", "Falcon"};
  std::vector<std::string> zeroshot_withheld{"Eagle", "Falcon"};
  std::string negative_fixture;  // optional second fixture for the control arms
  /// The withheld arm hands the weight of its withheld raptors to the
  /// remaining ones, so both arms see the same bird mix.
  bool keep_raptor_share = true;

  // Fixture generation.
  std::uint64_t samples_per_entry = 10;
  std::size_t llm_parallelism = 4;
  std::string fixture_out = "fixture.json";

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  /// Checks every invariant; throws ConfigError.
  void validate() const;

  std::string snapshots() const;
  std::uint64_t default_steps() const;

  /// The original-data catalog: garden minus withheld classes, weighted.
  ClassCatalog original_catalog() const;
  /// Only the withheld classes, weighted.
  ClassCatalog new_catalog() const;
  ClassCatalog full_catalog() const;
};

/// Opens the configured long-term memory. Fixture paths are resolved as given.
std::unique_ptr<LtmOracle> make_oracle(const ExperimentConfig& config, const std::string& fixture_path);
std::unique_ptr<LtmOracle> make_oracle(const ExperimentConfig& config);

/// Per-seed random streams.
struct RunSeeds {
  std::uint64_t encoders, memory, network, training, fewshot;
  explicit RunSeeds(std::uint64_t seed);
};

std::unique_ptr<QEstimator> make_estimator(const ExperimentConfig& config, std::shared_ptr<const Encoders> encoders,
                                           std::uint64_t seed);
std::unique_ptr<QEstimator> load_estimator(const ExperimentConfig& config, std::shared_ptr<const Encoders> encoders,
                                           const std::string& path);
std::string snapshot_path(const ExperimentConfig& config, std::uint64_t seed);

/// Append-only JSON-lines writer. Every record is flushed at evaluations and
/// on destruction, so aborted runs leave parseable files.
class MetricsWriter : public TrainingObserver {
 public:
  MetricsWriter(const std::filesystem::path& path, std::string run_id, std::string experiment, std::string arm,
                std::uint64_t seed, bool log_steps);
  ~MetricsWriter() override;

  void set_phase(std::string phase) { phase_ = std::move(phase); }
  /// Multiplier from batch steps to exposure-aligned steps (streaming runs).
  void set_step_scale(double s) { step_scale_ = s; }

  void on_step(const StepRecord& r) override;
  void on_eval(const EvalRecord& r) override;
  void flush();

  const std::filesystem::path& path() const { return path_; }

 private:
  void write(const std::string& line);

  std::filesystem::path path_;
  std::ofstream out_;
  std::string run_id_, experiment_, arm_, phase_;
  std::uint64_t seed_;
  bool log_steps_;
  double step_scale_ = 1.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::string arm;
  std::vector<EvalRecord> evaluations;
  std::uint64_t transitions = 0;
  std::uint64_t parameter_updates = 0;
  /// Last evaluation of each set.
  double final_eval(const std::string& set) const;
  /// First evaluation of each set.
  double initial_eval(const std::string& set) const;
  /// Evaluation of a set at a given step; throws if missing.
  double eval_at(const std::string& set, std::uint64_t step) const;
};

struct ExperimentResult {
  std::string experiment;
  std::vector<SeedResult> runs;
  /// Oracle optimum per evaluation set, when the memory has a table.
  std::map<std::string, double> optimum;
  std::vector<std::filesystem::path> metrics_files;

  std::vector<const SeedResult*> arm(const std::string& name) const;
};

/// Pretraining on the original data; writes snapshots.
ExperimentResult exp_train(const ExperimentConfig& config);
/// Loads snapshots and trains only on the withheld classes.
ExperimentResult exp_fewshot(const ExperimentConfig& config);
/// Arms "all" and "withheld" (and "negative-all"/"negative-withheld" when a
/// negative fixture is configured), evaluated on raptor encounters.
ExperimentResult exp_zeroshot(const ExperimentConfig& config);
/// SDM at batch 1 and batch 16 with matched transition counts.
ExperimentResult exp_streaming(const ExperimentConfig& config);
/// Greedy evaluation of stored snapshots on the original data.
ExperimentResult exp_eval(const ExperimentConfig& config);

/// Reads every *.jsonl below metrics_dir and writes fig4_fewshot.csv,
/// fig6_training.csv, fig7a_zeroshot.csv and fig7b_streaming.csv into
/// out_dir. Rows: experiment, arm, phase, set, step, runs, mean, sd.
/// Throws FormatError naming the file and line of a bad record.
std::vector<std::filesystem::path> export_plots(const std::filesystem::path& metrics_dir,
                                                const std::filesystem::path& out_dir);

}  // namespace cls
