#include "clh/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <Eigen/Core>

namespace clh {
namespace {

namespace fs = std::filesystem;

std::vector<std::size_t> union_batches(const Timeline& timeline, const Catalog& catalog, int upto) {
  std::vector<std::size_t> out;
  for (int i = 0; i <= upto; ++i) {
    auto b = episode_batch_indexes(timeline.episodes[static_cast<std::size_t>(i)], catalog);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

std::uint64_t finish_seed(const TrainConfig& cfg, int t) {
  return SeedBuilder(episode_seed(cfg, t)).push("finish").derive();
}

std::uint64_t model_seed(const TrainConfig& cfg) { return SeedBuilder(cfg.seed).push("model").derive(); }

int episode_steps(const TrainConfig& cfg, StrategyKind kind) {
  return kind == StrategyKind::JointFT ? cfg.base_steps : cfg.inc_steps;
}

/// Evaluates row t into progress (full row or diagonal only).
void evaluate_row(ChainProgress& p, const TaskWorld& world, const Timeline& timeline, int t, bool full) {
  const auto& catalog = world.catalog();
  std::vector<double> row(static_cast<std::size_t>(t) + 1, std::nan(""));
  std::vector<BatchScore> scores;
  for (int i = full ? 0 : t; i <= t; ++i) {
    const auto batches = episode_batch_indexes(timeline.episodes[static_cast<std::size_t>(i)], catalog);
    MerScore total;
    for (auto& bs : evaluate_batches(p.model, world, batches)) {
      total += bs.score;
      scores.push_back(std::move(bs));
    }
    row[static_cast<std::size_t>(i)] = total.mer();
  }
  p.matrix.push_row(std::move(row));
  p.breakdown.push_back(std::move(scores));
}

nlohmann::json breakdown_json(const std::vector<std::vector<BatchScore>>& rows) {
  auto arr = nlohmann::json::array();
  for (std::size_t t = 0; t < rows.size(); ++t) {
    auto batches = nlohmann::json::array();
    for (const auto& b : rows[t])
      batches.push_back({{"batch_id", b.batch_id},
                         {"H", b.score.hits},
                         {"S", b.score.subs},
                         {"D", b.score.dels},
                         {"I", b.score.ins},
                         {"mer", b.score.mer()}});
    arr.push_back({{"episode", t}, {"batches", batches}});
  }
  return arr;
}

std::vector<std::vector<BatchScore>> breakdown_from_json(const nlohmann::json& j) {
  std::vector<std::vector<BatchScore>> out;
  for (const auto& row : j) {
    std::vector<BatchScore> r;
    for (const auto& b : row.at("batches")) {
      BatchScore s;
      s.batch_id = b.at("batch_id").get<std::string>();
      s.score.hits = b.at("H").get<std::int64_t>();
      s.score.subs = b.at("S").get<std::int64_t>();
      s.score.dels = b.at("D").get<std::int64_t>();
      s.score.ins = b.at("I").get<std::int64_t>();
      r.push_back(std::move(s));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

nlohmann::json environment_stamp() {
  return {{"compiler", __VERSION__},
          {"cxx_standard", static_cast<long>(__cplusplus)},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"platform", "linux"}};
}

}  // namespace

void TrainConfig::validate() const {
  if (base_steps < 1 || inc_steps < 1 || minibatch < 1) throw ValidationError("steps and minibatch must be >= 1");
  if (!(base_lr > 0.0) || !(incremental_lr() > 0.0)) throw ValidationError("learning rates must be positive");
  if (!(temperature >= 1.0)) throw ValidationError("temperature must be >= 1");
  if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
}

nlohmann::json to_json(const RunSettings& s) {
  nlohmann::json j;
  j["model"] = {{"feature_dim", s.model.feature_dim},
                {"hidden", s.model.hidden},
                {"encoder_layers", s.model.encoder_layers},
                {"vocab_size", s.model.vocab_size},
                {"adapter_dim", s.model.adapter_dim}};
  j["task"] = {{"feature_dim", s.task.feature_dim},   {"vocab_size", s.task.vocab_size},
               {"t_max", s.task.t_max},               {"shift_strength", s.task.shift_strength},
               {"noise_sigma", s.task.noise_sigma},   {"noise_spread", s.task.noise_spread},
               {"max_angle", s.task.max_angle},       {"prior_skew", s.task.prior_skew},
               {"master_seed", s.task.master_seed}};
  j["train"] = {{"base_steps", s.train.base_steps},
                {"inc_steps", s.train.inc_steps},
                {"base_lr", s.train.base_lr},
                {"inc_lr", s.train.incremental_lr()},
                {"minibatch", s.train.minibatch},
                {"temperature", s.train.temperature},
                {"seed", s.train.seed},
                {"eval_every", s.train.eval_every},
                {"joint_reference_from_scratch", s.train.joint_reference_from_scratch}};
  j["strategy"] = {{"kind", to_string(s.strategy.kind)},
                   {"ewc_lambda", s.strategy.ewc_lambda},
                   {"ewc_alpha", s.strategy.ewc_alpha},
                   {"mas_lambda", s.strategy.mas_lambda},
                   {"mas_alpha", s.strategy.mas_alpha},
                   {"er_ratio", s.strategy.er_ratio},
                   {"adapter_dim", s.strategy.adapter_dim},
                   {"importance_samples", s.strategy.importance_samples}};
  j["amer_include_base"] = s.amer.include_base;
  return j;
}

RunSettings settings_from_json(const nlohmann::json& j, RunSettings s) {
  try {
    if (j.contains("model")) {
      const auto& m = j["model"];
      s.model.feature_dim = m.value("feature_dim", s.model.feature_dim);
      s.model.hidden = m.value("hidden", s.model.hidden);
      s.model.encoder_layers = m.value("encoder_layers", s.model.encoder_layers);
      s.model.vocab_size = m.value("vocab_size", s.model.vocab_size);
      s.model.adapter_dim = m.value("adapter_dim", s.model.adapter_dim);
    }
    if (j.contains("task")) {
      const auto& t = j["task"];
      s.task.feature_dim = t.value("feature_dim", s.task.feature_dim);
      s.task.vocab_size = t.value("vocab_size", s.task.vocab_size);
      s.task.t_max = t.value("t_max", s.task.t_max);
      s.task.shift_strength = t.value("shift_strength", s.task.shift_strength);
      s.task.noise_sigma = t.value("noise_sigma", s.task.noise_sigma);
      s.task.noise_spread = t.value("noise_spread", s.task.noise_spread);
      s.task.max_angle = t.value("max_angle", s.task.max_angle);
      s.task.prior_skew = t.value("prior_skew", s.task.prior_skew);
      s.task.master_seed = t.value("master_seed", s.task.master_seed);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      s.train.base_steps = t.value("base_steps", s.train.base_steps);
      s.train.inc_steps = t.value("inc_steps", s.train.inc_steps);
      s.train.base_lr = t.value("base_lr", s.train.base_lr);
      if (t.contains("inc_lr") && !t["inc_lr"].is_null()) s.train.inc_lr = t["inc_lr"].get<double>();
      s.train.minibatch = t.value("minibatch", s.train.minibatch);
      s.train.temperature = t.value("temperature", s.train.temperature);
      s.train.seed = t.value("seed", s.train.seed);
      s.train.eval_every = t.value("eval_every", s.train.eval_every);
      s.train.joint_reference_from_scratch =
          t.value("joint_reference_from_scratch", s.train.joint_reference_from_scratch);
    }
    if (j.contains("strategy")) {
      const auto& t = j["strategy"];
      if (t.contains("kind")) s.strategy.kind = parse_strategy(t["kind"].get<std::string>());
      s.strategy.ewc_lambda = t.value("ewc_lambda", s.strategy.ewc_lambda);
      s.strategy.ewc_alpha = t.value("ewc_alpha", s.strategy.ewc_alpha);
      s.strategy.mas_lambda = t.value("mas_lambda", s.strategy.mas_lambda);
      s.strategy.mas_alpha = t.value("mas_alpha", s.strategy.mas_alpha);
      s.strategy.er_ratio = t.value("er_ratio", s.strategy.er_ratio);
      s.strategy.adapter_dim = t.value("adapter_dim", s.strategy.adapter_dim);
      s.strategy.importance_samples = t.value("importance_samples", s.strategy.importance_samples);
      s.model.adapter_dim = s.strategy.adapter_dim;
    }
    s.amer.include_base = j.value("amer_include_base", s.amer.include_base);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  if (s.task.feature_dim != s.model.feature_dim || s.task.vocab_size != s.model.vocab_size)
    throw ValidationError("task and model must agree on feature_dim and vocab_size");
  return s;
}

std::uint64_t episode_seed(const TrainConfig& cfg, int t) {
  return SeedBuilder(cfg.seed).push("episode").push(static_cast<std::uint64_t>(t)).derive();
}

TrainSchedule incremental_schedule(const TrainConfig& cfg) {
  return {cfg.inc_steps, cfg.incremental_lr(), cfg.minibatch, cfg.temperature};
}

TrainSchedule joint_schedule(const TrainConfig& cfg) {
  return {cfg.base_steps, cfg.base_lr, cfg.minibatch, cfg.temperature};
}

std::vector<BatchScore> evaluate_batches(const ModelState& model, const TaskWorld& world,
                                         std::span<const std::size_t> batches) {
  std::vector<BatchScore> out;
  out.reserve(batches.size());
  for (auto b : batches) {
    const auto& lang = world.language_of(b);
    const bool adapter = model.has_adapter(lang);
    BatchScore bs;
    bs.batch_id = world.catalog().batch(b).batch_id;
    for (const auto& s : world.test_set(b)) bs.score += mer(s.reference, decode(forward(model, s, lang, adapter)));
    out.push_back(std::move(bs));
  }
  return out;
}

MerScore evaluate_episode(const ModelState& model, const TaskWorld& world, const Episode& episode) {
  MerScore total;
  const auto batches = episode_batch_indexes(episode, world.catalog());
  for (const auto& bs : evaluate_batches(model, world, batches)) total += bs.score;
  return total;
}

ModelState train_base(const TaskWorld& world, const Timeline& timeline, const RunSettings& settings) {
  settings.train.validate();
  if (timeline.episodes.empty() || timeline.episodes.front().batch_ids.empty())
    throw ValidationError("timeline has an empty base episode");
  ModelState model(settings.model, model_seed(settings.train));
  const auto batches = episode_batch_indexes(timeline.episodes.front(), world.catalog());
  for (const auto& l : episode_languages(timeline.episodes.front(), world.catalog())) model.add_head(l);
  DataPool pool(world.catalog(), batches);
  train_loop(model, world, pool, joint_schedule(settings.train), SeedBuilder(settings.train.seed).push("base").derive());
  return model;
}

ChainProgress start_chain(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                          const RunSettings& settings, const ChainOptions& opts) {
  for (const auto& l : episode_languages(timeline.episodes.front(), world.catalog()))
    if (!base.has_head(l)) throw ValidationError("base checkpoint lacks a head for E_0 language '" + l + "'");
  ChainProgress p;
  p.matrix = MerMatrix(timeline.tau);
  p.model = base;
  p.steps = settings.train.base_steps;
  evaluate_row(p, world, timeline, 0, true);
  const auto e0 = episode_batch_indexes(timeline.episodes.front(), world.catalog());
  finish_episode(settings.strategy, p.model, p.state, world, e0, finish_seed(settings.train, 0));
  p.completed = 0;
  if (opts.on_episode) opts.on_episode(p);
  if (opts.stop_after && *opts.stop_after == 0) throw ChainInterrupted("interrupted after episode 0");
  return p;
}

void continue_chain(ChainProgress& p, const TaskWorld& world, const Timeline& timeline, const RunSettings& settings,
                    const ChainOptions& opts) {
  const auto& catalog = world.catalog();
  StrategyConfig joint = settings.strategy;
  joint.kind = StrategyKind::JointFT;
  for (int t = p.completed + 1; t <= timeline.tau; ++t) {
    const bool restarting = t <= opts.restart_episode;
    const StrategyConfig& cfg = restarting ? joint : settings.strategy;
    EpisodeContext ctx;
    ctx.world = &world;
    ctx.scenario = timeline.scenario;
    ctx.episode = t;
    ctx.batches = episode_batch_indexes(timeline.episodes[static_cast<std::size_t>(t)], catalog);
    if (cfg.kind == StrategyKind::JointFT) ctx.history = union_batches(timeline, catalog, t);
    ctx.schedule = incremental_schedule(settings.train);
    ctx.joint_schedule = joint_schedule(settings.train);
    ctx.seed = episode_seed(settings.train, t);
    p.opt = train_episode(cfg, p.model, p.state, ctx);
    if (restarting && settings.strategy.kind != StrategyKind::JointFT)
      finish_episode(settings.strategy, p.model, p.state, world, ctx.batches, finish_seed(settings.train, t));
    p.steps += episode_steps(settings.train, cfg.kind);
    const bool full = !opts.diagonal_only && (t % settings.train.eval_every == 0 || t == timeline.tau);
    evaluate_row(p, world, timeline, t, full);
    p.completed = t;
    if (opts.on_episode) opts.on_episode(p);
    if (opts.stop_after && *opts.stop_after == t && t < timeline.tau)
      throw ChainInterrupted("interrupted after episode " + std::to_string(t));
  }
}

ChainProgress run_chain(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                        const RunSettings& settings, const ChainOptions& opts) {
  settings.strategy.validate();
  settings.train.validate();
  if (opts.restart_episode < 0 || opts.restart_episode > timeline.tau)
    throw ValidationError("restart episode outside [0, tau]");
  auto p = start_chain(world, timeline, base, settings, opts);
  continue_chain(p, world, timeline, settings, opts);
  return p;
}

ReferenceRuns reference_runs(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                             const RunSettings& settings) {
  ChainOptions diag;
  diag.diagonal_only = true;
  RunSettings inc = settings;
  inc.strategy = StrategyConfig{};
  inc.strategy.kind = StrategyKind::IncFT;
  ReferenceRuns out;
  out.incft = run_chain(world, timeline, base, inc, diag).matrix;
  out.diagonals.incft = out.incft.diagonal();

  if (!settings.train.joint_reference_from_scratch) {
    RunSettings joint = inc;
    joint.strategy.kind = StrategyKind::JointFT;
    out.jointft = run_chain(world, timeline, base, joint, diag).matrix;
  } else {
    out.jointft = MerMatrix(timeline.tau);
    const auto& catalog = world.catalog();
    for (int t = 0; t <= timeline.tau; ++t) {
      std::vector<double> row(static_cast<std::size_t>(t) + 1, std::nan(""));
      ModelState model = base;
      if (t > 0) {
        model = ModelState(settings.model, model_seed(settings.train));
        const auto batches = union_batches(timeline, catalog, t);
        DataPool pool(catalog, batches);
        for (const auto& [lang, _] : pool.language_counts()) model.add_head(lang);
        train_loop(model, world, pool, joint_schedule(settings.train), episode_seed(settings.train, t));
      }
      row.back() = evaluate_episode(model, world, timeline.episodes[static_cast<std::size_t>(t)]).mer();
      out.jointft.push_row(std::move(row));
    }
  }
  out.diagonals.jointft = out.jointft.diagonal();
  return out;
}

RunResult make_result(const ChainProgress& chain, const ReferenceDiagonals& refs, const Timeline& timeline,
                      const RunSettings& settings, int restart_episode) {
  RunResult r;
  r.scenario = to_string(timeline.scenario);
  r.strategy = to_string(settings.strategy.kind);
  r.restart_episode = restart_episode;
  r.matrix = chain.matrix;
  r.references = refs;
  r.series = metric_series(chain.matrix, refs, settings.amer);
  r.breakdown = chain.breakdown;
  r.buffer_growth = chain.state.buffer_growth;
  r.steps = chain.steps;
  r.config = to_json(settings);
  return r;
}

nlohmann::json to_json(const RunResult& r) {
  return {{"format", "clh-run-result"},
          {"version", 1},
          {"scenario", r.scenario},
          {"strategy", r.strategy},
          {"restart_episode", r.restart_episode},
          {"mer_matrix", to_json(r.matrix)},
          {"references", to_json(r.references)},
          {"metrics", to_json(r.series)},
          {"breakdown", breakdown_json(r.breakdown)},
          {"buffer_growth", r.buffer_growth},
          {"steps", r.steps},
          {"config", r.config}};
}

RunResult run_result_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "clh-run-result") throw ValidationError("not a run result");
    RunResult r;
    r.scenario = j.at("scenario").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.restart_episode = j.at("restart_episode").get<int>();
    r.matrix = mer_matrix_from_json(j.at("mer_matrix"));
    r.references = reference_diagonals_from_json(j.at("references"));
    r.series = metric_series_from_json(j.at("metrics"));
    r.breakdown = breakdown_from_json(j.at("breakdown"));
    r.buffer_growth = j.at("buffer_growth").get<std::vector<std::int64_t>>();
    r.steps = j.at("steps").get<std::int64_t>();
    r.config = j.at("config");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed run result: ") + e.what());
  }
}

RunResult restart_from_joint(const TaskWorld& world, const Timeline& timeline, const ModelState& base,
                             const ReferenceDiagonals& refs, const RunSettings& settings, int restart_episode) {
  if (restart_episode < 1 || restart_episode > timeline.tau)
    throw ValidationError("restart episode must lie in [1, " + std::to_string(timeline.tau) + "]");
  ChainOptions opts;
  opts.restart_episode = restart_episode;
  return make_result(run_chain(world, timeline, base, settings, opts), refs, timeline, settings, restart_episode);
}

// ---- persistence -------------------------------------------------------------

namespace {

nlohmann::json cache_key(const Catalog& catalog, const Timeline& timeline, const RunSettings& settings) {
  auto cfg = to_json(settings);
  cfg["train"].erase("eval_every");
  return {{"catalog_digest", hex32(catalog.digest())},
          {"timeline_digest", hex32(crc32_of(serialize_timeline(timeline)))},
          {"model", cfg["model"]},
          {"task", cfg["task"]},
          {"train", cfg["train"]}};
}

nlohmann::json progress_json(const ChainProgress& p) {
  nlohmann::json body = {{"completed", p.completed},
                         {"mer_matrix", to_json(p.matrix)},
                         {"breakdown", breakdown_json(p.breakdown)},
                         {"steps", p.steps}};
  return {{"body", body}, {"checksum", hex32(crc32_of(body.dump()))}};
}

}  // namespace

fs::path cache_dir(const fs::path& root, const Catalog& catalog, const Timeline& timeline,
                   const RunSettings& settings) {
  return root / "cache" / hex32(crc32_of(cache_key(catalog, timeline, settings).dump()));
}

ModelState ensure_base(const fs::path& cache, const TaskWorld& world, const Timeline& timeline,
                       const RunSettings& settings, bool* reused) {
  const auto path = cache / "base.ckpt";
  if (fs::exists(path)) {
    if (reused) *reused = true;
    return load_checkpoint(path).model;
  }
  if (reused) *reused = false;
  Checkpoint ckpt;
  ckpt.model = train_base(world, timeline, settings);
  write_file_atomic(cache / "key.json", dump(cache_key(world.catalog(), timeline, settings)));
  save_checkpoint(ckpt, path);
  return ckpt.model;
}

ReferenceDiagonals ensure_references(const fs::path& cache, const TaskWorld& world, const Timeline& timeline,
                                     const ModelState& base, const RunSettings& settings, bool* reused) {
  const auto path = cache / "reference.json";
  if (fs::exists(path)) {
    if (reused) *reused = true;
    return reference_diagonals_from_json(nlohmann::json::parse(read_file(path)).at("diagonals"));
  }
  if (reused) *reused = false;
  const auto refs = reference_runs(world, timeline, base, settings);
  nlohmann::json j = {{"diagonals", to_json(refs.diagonals)},
                      {"incft", to_json(refs.incft)},
                      {"jointft", to_json(refs.jointft)},
                      {"joint_reference", settings.train.joint_reference_from_scratch ? "scratch" : "warm"}};
  write_file_atomic(path, dump(j));
  return refs.diagonals;
}

std::string config_hash(const Catalog& catalog, const Timeline& timeline, const RunSettings& settings,
                        int restart_episode) {
  nlohmann::json j = {{"catalog_digest", hex32(catalog.digest())},
                      {"timeline_digest", hex32(crc32_of(serialize_timeline(timeline)))},
                      {"settings", to_json(settings)},
                      {"restart_episode", restart_episode}};
  return hex32(crc32_of(j.dump()));
}

RunResult load_run_result(const fs::path& run_dir) {
  const auto path = run_dir / "result.json";
  if (!fs::exists(path)) throw ValidationError("run '" + run_dir.string() + "' is incomplete (no result.json)");
  try {
    return run_result_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("unreadable result in '" + run_dir.string() + "': " + e.what());
  }
}

RunOutcome execute_run(const RunRequest& req) {
  if (!req.world) throw ValidationError("run request lacks a task world");
  const auto& world = *req.world;
  const auto& catalog = world.catalog();
  const auto& settings = req.settings;
  settings.strategy.validate();
  settings.train.validate();
  if (req.restart_episode < 0 || req.restart_episode > req.timeline.tau)
    throw ValidationError("restart episode outside [0, tau]");
  if (settings.strategy.kind == StrategyKind::Adapters && req.timeline.scenario != Scenario::LIL)
    throw ValidationError("adapters only apply to LIL timelines");
  const auto report = validate_timeline(req.timeline, catalog);
  if (!report.ok()) throw ValidationError("timeline invalid: " + report.violations.front().message);

  const auto hash = config_hash(catalog, req.timeline, settings, req.restart_episode);
  const auto run_json = req.run_dir / "run.json";
  RunOutcome outcome;
  if (fs::exists(run_json)) {
    const auto existing = nlohmann::json::parse(read_file(run_json));
    if (existing.value("config_hash", "") != hash)
      throw ResumeMismatch("run directory '" + req.run_dir.string() + "' holds a run with config hash " +
                           existing.value("config_hash", "?") + ", expected " + hash);
    if (fs::exists(req.run_dir / "result.json")) {
      outcome.noop = true;
      outcome.result = load_run_result(req.run_dir);
      return outcome;
    }
  }
  const bool resuming = req.resume && fs::exists(req.run_dir / "progress.json");
  if (!resuming) {
    fs::remove_all(req.run_dir / "checkpoints");
    fs::remove(req.run_dir / "progress.json");
  }
  fs::create_directories(req.run_dir / "checkpoints");
  nlohmann::json run_doc = {{"format", "clh-run"},
                            {"version", 1},
                            {"config_hash", hash},
                            {"config", to_json(settings)},
                            {"restart_episode", req.restart_episode},
                            {"scenario", to_string(req.timeline.scenario)},
                            {"timeline_digest", hex32(crc32_of(serialize_timeline(req.timeline)))},
                            {"catalog_digest", hex32(catalog.digest())},
                            {"environment", environment_stamp()}};
  write_file_atomic(run_json, dump(run_doc));

  const auto start = std::chrono::steady_clock::now();
  const auto cache = cache_dir(req.output_root, catalog, req.timeline, settings);
  const auto base = ensure_base(cache, world, req.timeline, settings, &outcome.reused_base);
  const auto refs = ensure_references(cache, world, req.timeline, base, settings, &outcome.reused_references);
  write_file_atomic(req.run_dir / "reference" / "diagonals.json", dump(to_json(refs)));

  ChainOptions opts;
  opts.restart_episode = req.restart_episode;
  opts.stop_after = req.stop_after;
  opts.on_episode = [&](const ChainProgress& p) {
    save_checkpoint({p.model, p.opt, p.state}, req.run_dir / "checkpoints" / ("ep_" + std::to_string(p.completed) + ".ckpt"));
    write_file_atomic(req.run_dir / "progress.json", dump(progress_json(p)));
  };

  ChainProgress progress;
  if (resuming) {
    const auto doc = nlohmann::json::parse(read_file(req.run_dir / "progress.json"));
    const auto& body = doc.at("body");
    if (hex32(crc32_of(body.dump())) != doc.at("checksum").get<std::string>())
      throw RuntimeFailure("progress.json checksum mismatch (corrupted run directory)");
    progress.completed = body.at("completed").get<int>();
    progress.matrix = mer_matrix_from_json(body.at("mer_matrix"));
    progress.breakdown = breakdown_from_json(body.at("breakdown"));
    progress.steps = body.at("steps").get<std::int64_t>();
    auto ckpt = load_checkpoint(req.run_dir / "checkpoints" / ("ep_" + std::to_string(progress.completed) + ".ckpt"));
    progress.model = std::move(ckpt.model);
    progress.opt = std::move(ckpt.opt);
    progress.state = std::move(ckpt.strategy);
    outcome.resumed_from = progress.completed;
  } else {
    progress = start_chain(world, req.timeline, base, settings, opts);
  }
  continue_chain(progress, world, req.timeline, settings, opts);

  outcome.result = make_result(progress, refs, req.timeline, settings, req.restart_episode);
  write_file_atomic(req.run_dir / "mer_matrix.json", dump(to_json(outcome.result.matrix)));
  write_file_atomic(req.run_dir / "mer_matrix.csv", mer_matrix_csv(outcome.result.matrix));
  write_file_atomic(req.run_dir / "metrics.json", dump(to_json(outcome.result.series)));
  write_file_atomic(req.run_dir / "metrics.csv", metric_series_csv(outcome.result.series));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(req.run_dir / "timing.json",
                    dump({{"wallclock_seconds", seconds}, {"resumed_from", outcome.resumed_from}}));
  write_file_atomic(req.run_dir / "result.json", dump(to_json(outcome.result)));
  return outcome;
}

}  // namespace clh
