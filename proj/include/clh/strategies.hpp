#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clh/micromodel.hpp"
#include "clh/taskgen.hpp"
#include "clh/timeline.hpp"

namespace clh {

enum class StrategyKind { IncFT, JointFT, EWC, ER, MAS, Adapters };

std::string to_string(StrategyKind k);
/// Throws ValidationError listing the supported names.
StrategyKind parse_strategy(std::string_view name);
const std::vector<std::string>& supported_strategies();

struct StrategyConfig {
  StrategyKind kind = StrategyKind::IncFT;
  double ewc_lambda = 5.0;
  double ewc_alpha = 0.5;
  double mas_lambda = 0.5;
  double mas_alpha = 1.0;
  double er_ratio = 0.03;
  int adapter_dim = 8;
  /// Samples drawn from a finished episode to estimate Fisher / MAS importance.
  int importance_samples = 256;

  void validate() const;
  friend bool operator==(const StrategyConfig&, const StrategyConfig&) = default;
};

/// A training sample addressed by (catalog batch index, index in its train split).
struct SampleRef {
  std::uint32_t batch = 0;
  std::uint64_t index = 0;
  friend auto operator<=>(const SampleRef&, const SampleRef&) = default;
};

struct StrategyState {
  ParamMap anchor;      // parameters at the end of the previous episode
  ParamMap fisher;      // EWC
  ParamMap importance;  // MAS
  std::vector<SampleRef> replay_buffer;
  std::vector<std::int64_t> buffer_growth;  // per finished episode
  std::set<std::string> seen_languages;

  friend bool operator==(const StrategyState& a, const StrategyState& b) {
    return identical(a.anchor, b.anchor) && identical(a.fisher, b.fisher) && identical(a.importance, b.importance) &&
           a.replay_buffer == b.replay_buffer && a.buffer_growth == b.buffer_growth &&
           a.seen_languages == b.seen_languages;
  }
};

struct TrainSchedule {
  int steps = 600;
  double lr = 5e-4;
  int minibatch = 8;
  double temperature = 3.0;
};

/// The training split of a set of batches, grouped by language.
class DataPool {
 public:
  DataPool(const Catalog& catalog, std::span<const std::size_t> batches);

  std::int64_t size() const { return total_; }
  std::map<std::string, double> language_counts() const;
  /// Uniform over the language's samples.
  SampleRef draw(const std::string& language, Rng& rng) const;
  /// Uniform over all samples.
  SampleRef draw_any(Rng& rng) const;
  /// Every sample, sorted.
  std::vector<SampleRef> enumerate() const;

 private:
  struct LangSlice {
    std::vector<std::size_t> batches;
    std::vector<std::int64_t> cumulative;
  };
  const Catalog* catalog_;
  std::map<std::string, LangSlice> by_lang_;
  std::vector<std::size_t> all_batches_;
  std::vector<std::int64_t> all_cumulative_;
  std::int64_t total_ = 0;
};

struct StepRecord {
  int step = 0;
  double task_loss = 0.0;
  double penalty = 0.0;
  double objective = 0.0;
};
using StepLog = std::vector<StepRecord>;

struct PenaltyResult {
  double value = 0.0;
  GradientSet grads;
};

/// (lambda/2) sum F (theta - anchor)^2 over every tensor named in anchor.
PenaltyResult ewc_penalty(const ParamMap& params, const ParamMap& anchor, const ParamMap& weights, double lambda);

/// Online diagonal Fisher: alpha * old + (1 - alpha) * mean of squared
/// per-sample log-likelihood gradients.
ParamMap update_fisher(const ModelState& model, std::span<const Example> samples, const ParamMap& old_fisher,
                       double alpha);

/// alpha * old + mean |d mean_t ||f_t(x)||^2 / d theta|.
ParamMap mas_importance(const ModelState& model, std::span<const Example> samples, const ParamMap& old_omega,
                        double alpha);

/// Appends max(1, round(ratio * |E|)) samples drawn without replacement,
/// split across batches by largest remainder. Returns the growth.
std::int64_t er_extend_buffer(std::vector<SampleRef>& buffer, const Catalog& catalog,
                              std::span<const std::size_t> batches, double ratio, std::uint64_t seed);

struct LoopOptions {
  const std::vector<SampleRef>* replay = nullptr;
  const ParamMap* anchor = nullptr;
  const ParamMap* penalty_weights = nullptr;
  double penalty_lambda = 0.0;
  /// When set, only gradients whose names pass are applied.
  std::function<bool(const std::string&)> trainable;
  StepLog* log = nullptr;
};

/// Fresh Adam state, seeded minibatch stream. Returns the final optimizer
/// state.
OptState train_loop(ModelState& model, const TaskWorld& world, const DataPool& pool, const TrainSchedule& schedule,
                    std::uint64_t seed, const LoopOptions& opts = {});

struct EpisodeContext {
  const TaskWorld* world = nullptr;
  Scenario scenario = Scenario::LIL;
  int episode = 0;
  std::vector<std::size_t> batches;                 // E_t
  std::optional<std::vector<std::size_t>> history;  // E_0..E_t, JointFT only
  TrainSchedule schedule;                           // incremental schedule
  TrainSchedule joint_schedule;                     // JointFT schedule
  std::uint64_t seed = 0;
  StepLog* log = nullptr;
};

/// Trains on one episode starting from the incoming weights, then refreshes
/// the strategy state. Returns the optimizer state of the episode.
OptState train_episode(const StrategyConfig& cfg, ModelState& model, StrategyState& state, const EpisodeContext& ctx);

/// Refreshes anchors / importance / replay buffer after an episode. Called on
/// the base episode before the first incremental one.
void finish_episode(const StrategyConfig& cfg, const ModelState& model, StrategyState& state, const TaskWorld& world,
                    std::span<const std::size_t> batches, std::uint64_t seed);

/// Adds and trains an adapter + head for the episode's single new language,
/// leaving every other parameter untouched.
OptState adapters_train(ModelState& model, const EpisodeContext& ctx, int adapter_dim);

/// Draws n examples uniformly from a pool (with replacement).
std::vector<Sample> draw_samples(const TaskWorld& world, const DataPool& pool, int n, std::uint64_t seed,
                                 std::vector<std::string>* languages);

}  // namespace clh
