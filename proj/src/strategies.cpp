#include "clh/strategies.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace clh {
namespace {

bool is_adapter(const std::string& name) { return name.rfind("adapter.", 0) == 0; }

ParamMap regularized_params(const ModelState& model) {
  ParamMap out;
  for (const auto& [name, p] : model.params())
    if (!is_adapter(name)) out.emplace(name, p);
  return out;
}

ParamMap zeros_like(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, p] : params)
    if (!is_adapter(name)) out.emplace(name, Matrix::Zero(p.rows(), p.cols()));
  return out;
}

/// alpha * old + beta * fresh over the union of names.
ParamMap blend(const ParamMap& old, double alpha, const ParamMap& fresh, double beta) {
  ParamMap out;
  for (const auto& [name, f] : fresh) {
    auto it = old.find(name);
    out.emplace(name, it == old.end() || it->second.size() == 0 ? Matrix(beta * f) : Matrix(alpha * it->second + beta * f));
  }
  for (const auto& [name, o] : old)
    if (!out.count(name)) out.emplace(name, alpha * o);
  return out;
}

std::vector<Example> as_examples(const std::vector<Sample>& samples, const std::vector<std::string>& langs) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back({&samples[i], langs[i]});
  return out;
}

std::vector<std::string> languages_of(const Catalog& catalog, std::span<const std::size_t> batches) {
  std::set<std::string> langs;
  for (auto b : batches) langs.insert(catalog.batch(b).language);
  return {langs.begin(), langs.end()};
}

}  // namespace

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::IncFT: return "incft";
    case StrategyKind::JointFT: return "jointft";
    case StrategyKind::EWC: return "ewc";
    case StrategyKind::ER: return "er";
    case StrategyKind::MAS: return "mas";
    case StrategyKind::Adapters: return "adapters";
  }
  return "?";
}

const std::vector<std::string>& supported_strategies() {
  static const std::vector<std::string> names{"incft", "jointft", "ewc", "er", "mas", "adapters"};
  return names;
}

StrategyKind parse_strategy(std::string_view name) {
  std::string s(name);
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  static const std::map<std::string, StrategyKind> table{
      {"incft", StrategyKind::IncFT}, {"jointft", StrategyKind::JointFT}, {"ewc", StrategyKind::EWC},
      {"er", StrategyKind::ER},       {"mas", StrategyKind::MAS},         {"adapters", StrategyKind::Adapters}};
  auto it = table.find(s);
  if (it != table.end()) return it->second;
  std::string list;
  for (const auto& n : supported_strategies()) list += (list.empty() ? "" : ", ") + n;
  throw ValidationError("unknown strategy '" + std::string(name) + "'; supported: " + list);
}

void StrategyConfig::validate() const {
  if (!(er_ratio > 0.0 && er_ratio <= 1.0)) throw ValidationError("er_ratio must lie in (0, 1]");
  if (!(ewc_lambda >= 0.0) || !(mas_lambda >= 0.0)) throw ValidationError("lambdas must be >= 0");
  if (!(ewc_alpha >= 0.0 && ewc_alpha <= 1.0) || !(mas_alpha >= 0.0 && mas_alpha <= 1.0))
    throw ValidationError("alphas must lie in [0, 1]");
  if (adapter_dim < 1) throw ValidationError("adapter_dim must be >= 1");
  if (importance_samples < 1) throw ValidationError("importance_samples must be >= 1");
}

DataPool::DataPool(const Catalog& catalog, std::span<const std::size_t> batches) : catalog_(&catalog) {
  std::vector<std::size_t> sorted(batches.begin(), batches.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (auto b : sorted) {
    const auto& meta = catalog.batch(b);
    auto& slice = by_lang_[meta.language];
    slice.batches.push_back(b);
    slice.cumulative.push_back((slice.cumulative.empty() ? 0 : slice.cumulative.back()) + meta.n_train);
    all_batches_.push_back(b);
    total_ += meta.n_train;
    all_cumulative_.push_back(total_);
  }
}

std::map<std::string, double> DataPool::language_counts() const {
  std::map<std::string, double> out;
  for (const auto& [lang, slice] : by_lang_) out[lang] = static_cast<double>(slice.cumulative.back());
  return out;
}

namespace {
SampleRef pick(const std::vector<std::size_t>& batches, const std::vector<std::int64_t>& cumulative, Rng& rng) {
  const auto r = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(cumulative.back())));
  const auto pos = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
  const std::int64_t start = pos == 0 ? 0 : cumulative[pos - 1];
  return {static_cast<std::uint32_t>(batches[pos]), static_cast<std::uint64_t>(r - start)};
}
}  // namespace

SampleRef DataPool::draw(const std::string& language, Rng& rng) const {
  const auto& slice = by_lang_.at(language);
  return pick(slice.batches, slice.cumulative, rng);
}

SampleRef DataPool::draw_any(Rng& rng) const {
  if (total_ == 0) throw ValidationError("cannot draw from an empty pool");
  return pick(all_batches_, all_cumulative_, rng);
}

std::vector<SampleRef> DataPool::enumerate() const {
  std::vector<SampleRef> out;
  out.reserve(static_cast<std::size_t>(total_));
  for (auto b : all_batches_)
    for (std::int64_t i = 0; i < catalog_->batch(b).n_train; ++i)
      out.push_back({static_cast<std::uint32_t>(b), static_cast<std::uint64_t>(i)});
  return out;
}

PenaltyResult ewc_penalty(const ParamMap& params, const ParamMap& anchor, const ParamMap& weights, double lambda) {
  PenaltyResult out;
  for (const auto& [name, star] : anchor) {
    auto p = params.find(name);
    auto w = weights.find(name);
    if (p == params.end() || w == weights.end())
      throw ValidationError("penalty: '" + name + "' missing from parameters or weights");
    if (p->second.rows() != star.rows() || p->second.cols() != star.cols() || w->second.rows() != star.rows() ||
        w->second.cols() != star.cols())
      throw ValidationError("penalty: shape mismatch for '" + name + "'");
    const Matrix diff = p->second - star;
    out.value += 0.5 * lambda * (w->second.array() * diff.array().square()).sum();
    out.grads.emplace(name, lambda * w->second.cwiseProduct(diff));
  }
  return out;
}

ParamMap update_fisher(const ModelState& model, std::span<const Example> samples, const ParamMap& old_fisher,
                       double alpha) {
  ParamMap fresh = zeros_like(model.params());
  for (const auto& ex : samples) {
    const auto lg = loss_and_grad(model, std::span<const Example>(&ex, 1));
    for (const auto& [name, g] : lg.grads) {
      auto it = fresh.find(name);
      if (it != fresh.end()) it->second += g.cwiseProduct(g);
    }
  }
  if (!samples.empty())
    for (auto& [_, f] : fresh) f /= static_cast<double>(samples.size());
  return blend(old_fisher, alpha, fresh, 1.0 - alpha);
}

ParamMap mas_importance(const ModelState& model, std::span<const Example> samples, const ParamMap& old_omega,
                        double alpha) {
  ParamMap fresh = zeros_like(model.params());
  for (const auto& ex : samples) {
    const auto og = output_norm_and_grad(model, *ex.sample, ex.language);
    for (const auto& [name, g] : og.grads) {
      auto it = fresh.find(name);
      if (it != fresh.end()) it->second += g.cwiseAbs();
    }
  }
  if (!samples.empty())
    for (auto& [_, f] : fresh) f /= static_cast<double>(samples.size());
  return blend(old_omega, alpha, fresh, 1.0);
}

std::int64_t er_extend_buffer(std::vector<SampleRef>& buffer, const Catalog& catalog,
                              std::span<const std::size_t> batches, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("replay ratio must lie in (0, 1]");
  std::vector<std::size_t> sorted(batches.begin(), batches.end());
  std::sort(sorted.begin(), sorted.end());
  std::int64_t total = 0;
  for (auto b : sorted) total += catalog.batch(b).n_train;
  if (total == 0) return 0;
  const std::int64_t k = std::max<std::int64_t>(1, std::llround(ratio * static_cast<double>(total)));

  // Largest-remainder split of k across batches, proportional to batch size.
  std::vector<std::int64_t> quota(sorted.size());
  std::vector<std::pair<std::int64_t, std::size_t>> remainders;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const std::int64_t num = k * catalog.batch(sorted[i]).n_train;
    quota[i] = num / total;
    assigned += quota[i];
    remainders.emplace_back(num % total, i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::int64_t r = 0; r < k - assigned; ++r) ++quota[remainders[static_cast<std::size_t>(r)].second];

  auto rng = SeedBuilder(seed).push("replay").rng();
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto n = static_cast<std::uint64_t>(catalog.batch(sorted[i]).n_train);
    const auto q = static_cast<std::uint64_t>(quota[i]);
    // Partial Fisher-Yates over a sparse index map.
    std::map<std::uint64_t, std::uint64_t> swapped;
    auto value_at = [&](std::uint64_t j) {
      auto it = swapped.find(j);
      return it == swapped.end() ? j : it->second;
    };
    std::vector<std::uint64_t> chosen;
    for (std::uint64_t j = 0; j < q; ++j) {
      const std::uint64_t r = j + uniform_index(rng, n - j);
      const auto vj = value_at(j), vr = value_at(r);
      swapped[r] = vj;
      swapped[j] = vr;
      chosen.push_back(vr);
    }
    std::sort(chosen.begin(), chosen.end());
    for (auto idx : chosen) buffer.push_back({static_cast<std::uint32_t>(sorted[i]), idx});
  }
  return k;
}

OptState train_loop(ModelState& model, const TaskWorld& world, const DataPool& pool, const TrainSchedule& schedule,
                    std::uint64_t seed, const LoopOptions& opts) {
  if (schedule.steps < 0 || schedule.minibatch < 1) throw ValidationError("invalid training schedule");
  OptState opt;
  opt.lr = schedule.lr;
  if (schedule.steps == 0) return opt;
  TemperatureSampler sampler(pool.language_counts(), schedule.temperature, seed);
  auto rng = SeedBuilder(seed).push("minibatch").rng();
  const std::size_t replay_size = opts.replay ? opts.replay->size() : 0;
  const double replay_share =
      static_cast<double>(replay_size) / static_cast<double>(replay_size + static_cast<std::size_t>(pool.size()));

  std::vector<Sample> samples(static_cast<std::size_t>(schedule.minibatch));
  std::vector<Example> batch(static_cast<std::size_t>(schedule.minibatch));
  for (int step = 0; step < schedule.steps; ++step) {
    for (std::size_t k = 0; k < samples.size(); ++k) {
      SampleRef ref;
      if (replay_size > 0 && uniform01(rng) < replay_share) {
        ref = (*opts.replay)[uniform_index(rng, replay_size)];
      } else {
        ref = pool.draw(sampler.next(), rng);
      }
      samples[k] = world.train_sample(ref.batch, ref.index);
      batch[k] = {&samples[k], world.language_of(ref.batch)};
    }
    auto lg = loss_and_grad(model, batch);
    if (opts.trainable) std::erase_if(lg.grads, [&](const auto& kv) { return !opts.trainable(kv.first); });
    double penalty = 0.0;
    if (opts.anchor && opts.penalty_weights) {
      auto pr = ewc_penalty(model.params(), *opts.anchor, *opts.penalty_weights, opts.penalty_lambda);
      penalty = pr.value;
      // A tensor without a task gradient only gets an update when it has
      // drifted from the anchor; a zero penalty gradient must not wake Adam.
      for (auto& [name, pg] : pr.grads) {
        if (opts.trainable && !opts.trainable(name)) continue;
        auto it = lg.grads.find(name);
        if (it != lg.grads.end()) {
          it->second += pg;
        } else if (!pg.isZero(0.0)) {
          lg.grads.emplace(name, pg);
        }
      }
    }
    if (opts.log) opts.log->push_back({step, lg.loss, penalty, lg.loss + penalty});
    adam_step(model, opt, lg.grads);
  }
  return opt;
}

std::vector<Sample> draw_samples(const TaskWorld& world, const DataPool& pool, int n, std::uint64_t seed,
                                 std::vector<std::string>* languages) {
  auto rng = SeedBuilder(seed).push("importance").rng();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto ref = pool.draw_any(rng);
    out.push_back(world.train_sample(ref.batch, ref.index));
    if (languages) languages->push_back(world.language_of(ref.batch));
  }
  return out;
}

void finish_episode(const StrategyConfig& cfg, const ModelState& model, StrategyState& state, const TaskWorld& world,
                    std::span<const std::size_t> batches, std::uint64_t seed) {
  for (const auto& l : languages_of(world.catalog(), batches)) state.seen_languages.insert(l);
  switch (cfg.kind) {
    case StrategyKind::EWC:
    case StrategyKind::MAS: {
      DataPool pool(world.catalog(), batches);
      std::vector<std::string> langs;
      const auto samples = draw_samples(world, pool, cfg.importance_samples, seed, &langs);
      const auto examples = as_examples(samples, langs);
      if (cfg.kind == StrategyKind::EWC) {
        state.fisher = update_fisher(model, examples, state.fisher, cfg.ewc_alpha);
      } else {
        state.importance = mas_importance(model, examples, state.importance, cfg.mas_alpha);
      }
      state.anchor = regularized_params(model);
      break;
    }
    case StrategyKind::ER:
      state.buffer_growth.push_back(er_extend_buffer(state.replay_buffer, world.catalog(), batches, cfg.er_ratio, seed));
      break;
    default:
      break;
  }
}

OptState adapters_train(ModelState& model, const EpisodeContext& ctx, int adapter_dim) {
  if (ctx.scenario != Scenario::LIL)
    throw ValidationError("adapters only apply to LIL timelines; got " + to_string(ctx.scenario));
  if (adapter_dim != model.config().adapter_dim)
    throw ValidationError("adapter_dim differs from the model's adapter width");
  const auto langs = languages_of(ctx.world->catalog(), ctx.batches);
  std::vector<std::string> fresh;
  for (const auto& l : langs)
    if (!model.has_head(l)) fresh.push_back(l);
  if (ctx.episode < 1 || langs.size() != 1 || fresh.size() != 1)
    throw ValidationError("adapters need an incremental episode with exactly one new language");
  const auto& lang = fresh.front();
  model.add_adapter(lang);
  model.add_head(lang);
  const auto ap = adapter_prefix(lang), hp = head_prefix(lang);
  LoopOptions opts;
  opts.trainable = [ap, hp](const std::string& name) { return name.rfind(ap, 0) == 0 || name.rfind(hp, 0) == 0; };
  opts.log = ctx.log;
  DataPool pool(ctx.world->catalog(), ctx.batches);
  return train_loop(model, *ctx.world, pool, ctx.schedule, ctx.seed, opts);
}

OptState train_episode(const StrategyConfig& cfg, ModelState& model, StrategyState& state, const EpisodeContext& ctx) {
  cfg.validate();
  if (!ctx.world) throw ValidationError("episode context lacks a task world");
  const auto& catalog = ctx.world->catalog();
  OptState opt;
  if (cfg.kind == StrategyKind::Adapters) {
    opt = adapters_train(model, ctx, cfg.adapter_dim);
  } else {
    for (const auto& l : languages_of(catalog, ctx.batches)) model.add_head(l);
    LoopOptions opts;
    opts.log = ctx.log;
    switch (cfg.kind) {
      case StrategyKind::IncFT:
        opt = train_loop(model, *ctx.world, DataPool(catalog, ctx.batches), ctx.schedule, ctx.seed, opts);
        break;
      case StrategyKind::JointFT: {
        if (!ctx.history) throw ValidationError("JointFT needs the union of all episodes so far");
        for (const auto& l : languages_of(catalog, *ctx.history)) model.add_head(l);
        opt = train_loop(model, *ctx.world, DataPool(catalog, *ctx.history), ctx.joint_schedule, ctx.seed, opts);
        break;
      }
      case StrategyKind::EWC:
      case StrategyKind::MAS:
        opts.anchor = &state.anchor;
        opts.penalty_weights = cfg.kind == StrategyKind::EWC ? &state.fisher : &state.importance;
        opts.penalty_lambda = cfg.kind == StrategyKind::EWC ? cfg.ewc_lambda : cfg.mas_lambda;
        opt = train_loop(model, *ctx.world, DataPool(catalog, ctx.batches), ctx.schedule, ctx.seed, opts);
        break;
      case StrategyKind::ER:
        opts.replay = &state.replay_buffer;
        opt = train_loop(model, *ctx.world, DataPool(catalog, ctx.batches), ctx.schedule, ctx.seed, opts);
        break;
      case StrategyKind::Adapters:
        break;
    }
  }
  finish_episode(cfg, model, state, *ctx.world, ctx.batches, SeedBuilder(ctx.seed).push("finish").derive());
  return opt;
}

}  // namespace clh
