#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clh/checkpoint.hpp"
#include "clh/metrics.hpp"
#include "clh/micromodel.hpp"
#include "clh/strategies.hpp"
#include "clh/taskgen.hpp"
#include "clh/timeline.hpp"

namespace clh {

struct TrainConfig {
  int base_steps = 3000;
  int inc_steps = 600;
  double base_lr = 1e-3;
  /// Defaults to base_lr / 2.
  std::optional<double> inc_lr;
  int minibatch = 8;
  double temperature = 3.0;
  std::uint64_t seed = 1;
  /// Full MER rows every k episodes (and at the last one); other rows only
  /// evaluate their diagonal entry.
  int eval_every = 1;
  /// Train each JointFT reference model from scratch instead of warm-starting.
  bool joint_reference_from_scratch = false;

  double incremental_lr() const { return inc_lr.value_or(base_lr / 2.0); }
  void validate() const;
};

struct RunSettings {
  ModelConfig model;
  TaskConfig task;
  TrainConfig train;
  StrategyConfig strategy;
  AmerOptions amer;
};

nlohmann::json to_json(const RunSettings& s);
/// Missing keys keep the values already in `base`.
RunSettings settings_from_json(const nlohmann::json& j, RunSettings base = {});

struct BatchScore {
  std::string batch_id;
  MerScore score;
  friend bool operator==(const BatchScore&, const BatchScore&) = default;
};

/// Everything an interrupted chain needs to continue.
struct ChainProgress {
  int completed = -1;  // last finished episode
  MerMatrix matrix;
  std::vector<std::vector<BatchScore>> breakdown;  // per MER row
  std::int64_t steps = 0;
  ModelState model;
  OptState opt;
  StrategyState state;
};

struct ChainOptions {
  /// Episodes 1..restart_episode train as JointFT before the configured strategy takes over.
  int restart_episode = 0;
  /// Reference chains only need MER_{t,t}.
  bool diagonal_only = false;
  /// Called after each finished episode (including the base row).
  std::function<void(const ChainProgress&)> on_episode;
  /// Throws ChainInterrupted after this episode has been reported.
  std::optional<int> stop_after;
};

class ChainInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seed of episode t's training stream (independent of the strategy).
std::uint64_t episode_seed(const TrainConfig& cfg, int t);
TrainSchedule incremental_schedule(const TrainConfig& cfg);
TrainSchedule joint_schedule(const TrainConfig& cfg);

/// Batch-level and episode-level MER of a model on the test splits.
std::vector<BatchScore> evaluate_batches(const ModelState& model, const TaskWorld& world,
                                         std::span<const std::size_t> batches);
MerScore evaluate_episode(const ModelState& model, const TaskWorld& world, const Episode& episode);

/// Base model m_0: fresh model with heads for E_0's languages, trained on E_0
/// with temperature-sampled language mixing.
ModelState train_base(const TaskWorld& world, const Timeline& timeline, const RunSettings& settings);

/// Row 0 plus strategy-state initialisation on E_0.
ChainProgress start_chain(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                          const RunSettings& settings, const ChainOptions& opts = {});
/// Runs episodes completed+1 .. tau.
void continue_chain(ChainProgress& progress, const TaskWorld& world, const Timeline& timeline,
                    const RunSettings& settings, const ChainOptions& opts = {});
ChainProgress run_chain(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                        const RunSettings& settings, const ChainOptions& opts = {});

struct ReferenceRuns {
  ReferenceDiagonals diagonals;
  MerMatrix incft;    // diagonal-only matrices
  MerMatrix jointft;
};

ReferenceRuns reference_runs(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                             const RunSettings& settings);

struct RunResult {
  std::string scenario;
  std::string strategy;
  int restart_episode = 0;
  MerMatrix matrix;
  ReferenceDiagonals references;
  std::vector<MetricRow> series;
  std::vector<std::vector<BatchScore>> breakdown;
  std::vector<std::int64_t> buffer_growth;
  std::int64_t steps = 0;
  nlohmann::json config;
};

RunResult make_result(const ChainProgress& chain, const ReferenceDiagonals& refs, const Timeline& timeline,
                      const RunSettings& settings, int restart_episode = 0);
nlohmann::json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::json& j);

/// In-memory restart study: JointFT through restart_episode, then the
/// configured strategy. 1 <= restart_episode <= tau.
RunResult restart_from_joint(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                             const ReferenceDiagonals& refs, const RunSettings& settings, int restart_episode);

// ---- persistence -----------------------------------------------------------

/// Shared cache directory for base checkpoint and reference diagonals; keyed
/// by everything that influences them (not by the strategy).
std::filesystem::path cache_dir(const std::filesystem::path& root, const Catalog& catalog, const Timeline& timeline,
                                const RunSettings& settings);

ModelState ensure_base(const std::filesystem::path& cache, const TaskWorld& world, const Timeline& timeline,
                       const RunSettings& settings, bool* reused = nullptr);
ReferenceDiagonals ensure_references(const std::filesystem::path& cache, const TaskWorld& world,
                                     const Timeline& timeline, const ModelState& base, const RunSettings& settings,
                                     bool* reused = nullptr);

struct RunRequest {
  const TaskWorld* world = nullptr;
  Timeline timeline;
  RunSettings settings;
  std::filesystem::path run_dir;
  std::filesystem::path output_root;  // holds cache/
  bool resume = false;
  int restart_episode = 0;
  std::optional<int> stop_after;
};

struct RunOutcome {
  RunResult result;
  bool reused_base = false;
  bool reused_references = false;
  bool noop = false;       // run already complete
  int resumed_from = -1;   // last episode restored from disk, -1 when fresh
};

/// Full orchestration with the on-disk layout:
///   run.json, progress.json, checkpoints/ep_<t>.ckpt, reference/diagonals.json,
///   mer_matrix.{json,csv}, metrics.{json,csv}, result.json, timing.json
/// Throws ResumeMismatch if run_dir holds a run with a different config hash.
RunOutcome execute_run(const RunRequest& request);

std::string config_hash(const Catalog& catalog, const Timeline& timeline, const RunSettings& settings,
                        int restart_episode);

/// Reads result.json of a finished run directory; ValidationError if absent.
RunResult load_run_result(const std::filesystem::path& run_dir);

}  // namespace clh
