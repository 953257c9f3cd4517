#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clh/runner.hpp"

namespace fs = std::filesystem;
using namespace clh;

namespace {

Catalog open_catalog(const std::string& path) {
  return load_catalog(path.empty() ? bundled_catalog_path() : fs::path(path));
}

nlohmann::json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("no such file: " + path.string());
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string timeline_digest_of(const fs::path& run_dir) {
  const auto run = read_json(run_dir / "run.json");
  return run.value("timeline_digest", "");
}

int cmd_build_timeline(const std::string& catalog_path, const std::string& scenario, std::uint64_t seed,
                       std::optional<int> tau, const std::string& out) {
  const auto catalog = open_catalog(catalog_path);
  const auto sc = parse_scenario(scenario);
  TimelineOptions opts;
  if (tau) {
    if (sc == Scenario::LIL) throw ValidationError("--tau does not apply to lil (one episode per new language)");
    if (*tau < 1) throw ValidationError("--tau must be >= 1");
    opts.tau = *tau;
  }
  const auto timeline = build_timeline(sc, catalog, seed, opts);
  const auto summary = format_summary(timeline, catalog);
  save_timeline(timeline, out);
  write_file_atomic(fs::path(out).replace_extension(".summary.txt"), summary);
  std::cout << summary;
  return 0;
}

struct RunFlags {
  std::string timeline, strategy, config, out, root, catalog;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> eval_every, base_steps, inc_steps, restart_episode, stop_after;
  bool joint_from_scratch = false;
};

int cmd_run(const RunFlags& f) {
  const auto catalog = open_catalog(f.catalog);
  const auto timeline = load_timeline(f.timeline);
  if (timeline.catalog_digest != catalog.digest())
    throw ValidationError("timeline was built from a different catalog (digest " + hex32(timeline.catalog_digest) +
                          ", catalog " + hex32(catalog.digest()) + ")");
  RunSettings settings;
  if (!f.config.empty()) settings = settings_from_json(read_json(f.config));
  if (!f.strategy.empty()) settings.strategy.kind = parse_strategy(f.strategy);
  if (f.seed) settings.train.seed = *f.seed;
  if (f.eval_every) settings.train.eval_every = *f.eval_every;
  if (f.base_steps) settings.train.base_steps = *f.base_steps;
  if (f.inc_steps) settings.train.inc_steps = *f.inc_steps;
  if (f.joint_from_scratch) settings.train.joint_reference_from_scratch = true;
  settings.strategy.validate();
  settings.train.validate();

  fs::path root = f.root;
  if (root.empty())
    if (const char* env = std::getenv("CLH_OUTPUT_ROOT"); env && *env) root = env;
  fs::path out = f.out;
  if (out.empty()) {
    if (root.empty()) root = "runs";
    out = root / (to_string(timeline.scenario) + "-" + to_string(settings.strategy.kind) + "-s" +
                  std::to_string(settings.train.seed));
  }
  if (root.empty()) root = fs::absolute(out).parent_path();

  const TaskWorld world(catalog, settings.task);
  RunRequest req;
  req.world = &world;
  req.timeline = timeline;
  req.settings = settings;
  req.run_dir = out;
  req.output_root = root;
  req.resume = f.resume;
  req.restart_episode = f.restart_episode.value_or(0);
  req.stop_after = f.stop_after;
  const auto outcome = execute_run(req);
  if (outcome.noop) {
    std::cout << "run in " << out.string() << " is already complete; nothing to do\n";
    return 0;
  }
  std::cout << "base model: " << (outcome.reused_base ? "reused from cache" : "trained") << "\n";
  std::cout << "reference runs: " << (outcome.reused_references ? "reused from cache" : "trained") << "\n";
  if (outcome.resumed_from >= 0) std::cout << "resumed after episode " << outcome.resumed_from << "\n";
  const auto& last = outcome.result.series.back();
  std::cout << "final AMER " << format_double(last.amer) << " -> " << out.string() << "\n";
  return 0;
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : "-"; }

int cmd_report(const std::string& run_dir, const std::string& format) {
  const auto result = load_run_result(run_dir);
  if (format == "series") {
    std::cout << metric_series_csv(result.series);
    return 0;
  }
  std::printf("%s / %s\n", result.scenario.c_str(), result.strategy.c_str());
  std::printf("%-8s %-22s %-22s %-22s %-22s\n", "episode", "AMER", "FWT", "BWT", "IM");
  for (const auto& r : result.series)
    std::printf("%-8d %-22s %-22s %-22s %-22s\n", r.episode, format_double(r.amer).c_str(), cell(r.fwt).c_str(),
                cell(r.bwt).c_str(), cell(r.im).c_str());
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& metric) {
  if (dirs.size() < 2) throw ValidationError("compare needs at least two run directories");
  std::vector<RunResult> results;
  std::string digest;
  for (const auto& d : dirs) {
    results.push_back(load_run_result(d));
    const auto dg = timeline_digest_of(d);
    if (digest.empty()) digest = dg;
    else if (dg != digest)
      throw ValidationError("runs use different timelines: " + dirs.front() + " vs " + d);
  }
  std::map<std::string, int> seen;
  for (const auto& r : results) ++seen[r.strategy];
  std::string out = "episode";
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    out += "," + (seen[r.strategy] > 1 ? r.strategy + "@" + fs::path(dirs[k]).filename().string() : r.strategy);
  }
  out += "\n";
  const auto rows = results.front().series.size();
  for (const auto& r : results)
    if (r.series.size() != rows) throw ValidationError("runs have different episode counts");
  for (std::size_t t = 0; t < rows; ++t) {
    out += std::to_string(t);
    for (const auto& r : results) {
      const auto& m = r.series[t];
      std::optional<double> v;
      if (metric == "amer") v = m.amer;
      else if (metric == "fwt") v = m.fwt;
      else if (metric == "bwt") v = m.bwt;
      else v = m.im;
      out += "," + (v ? format_double(*v) : std::string());
    }
    out += "\n";
  }
  std::cout << out;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clh: continual-learning harness for multilingual speech timelines"};
  app.require_subcommand(1);

  auto* bt = app.add_subcommand("build-timeline", "Build and serialize an episode timeline");
  std::string bt_catalog, bt_scenario, bt_out;
  std::uint64_t bt_seed = 1;
  std::optional<int> bt_tau;
  bt->add_option("--catalog", bt_catalog, "Catalog CSV/JSON (default: bundled 22-language catalog)");
  bt->add_option("--scenario", bt_scenario, "lil | dil | lidil")->required()
      ->check(CLI::IsMember({"lil", "dil", "lidil"}, CLI::ignore_case));
  bt->add_option("--seed", bt_seed, "Timeline seed");
  bt->add_option("--tau", bt_tau, "Incremental episodes (dil/lidil)");
  bt->add_option("--out", bt_out, "Output timeline JSON")->required();

  auto* run = app.add_subcommand("run", "Train a strategy over a timeline");
  RunFlags rf;
  run->add_option("--timeline", rf.timeline, "Timeline JSON")->required();
  run->add_option("--strategy", rf.strategy, "incft | jointft | ewc | er | mas | adapters");
  run->add_option("--config", rf.config, "JSON config file; flags override it");
  run->add_option("--out", rf.out, "Run directory");
  run->add_option("--root", rf.root, "Output root holding the shared cache (default: $CLH_OUTPUT_ROOT)");
  run->add_option("--catalog", rf.catalog, "Catalog the timeline was built from");
  run->add_flag("--resume", rf.resume, "Continue from the last completed episode");
  run->add_option("--seed", rf.seed, "Run seed");
  run->add_option("--eval-every", rf.eval_every, "Full MER rows every k episodes");
  run->add_option("--base-steps", rf.base_steps, "Base and joint training steps");
  run->add_option("--inc-steps", rf.inc_steps, "Incremental training steps");
  run->add_option("--restart-episode", rf.restart_episode, "Train jointly through this episode first");
  run->add_flag("--joint-from-scratch", rf.joint_from_scratch, "Train JointFT references from scratch");
  run->add_option("--stop-after", rf.stop_after, "Stop after this episode")->group("");

  auto* rep = app.add_subcommand("report", "Print the metric table of a finished run");
  std::string rep_dir, rep_format = "table";
  rep->add_option("--run-dir", rep_dir, "Run directory")->required();
  rep->add_option("--format", rep_format, "table | series")->check(CLI::IsMember({"table", "series"}));

  auto* cmp = app.add_subcommand("compare", "Align one metric across runs (episode x run)");
  std::vector<std::string> cmp_dirs;
  std::string cmp_metric = "amer";
  cmp->add_option("--run-dirs", cmp_dirs, "Run directories")->required()->expected(1, -1);
  cmp->add_option("--metric", cmp_metric, "amer | fwt | bwt | im")->check(CLI::IsMember({"amer", "fwt", "bwt", "im"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*bt) return cmd_build_timeline(bt_catalog, bt_scenario, bt_seed, bt_tau, bt_out);
    if (*run) return cmd_run(rf);
    if (*rep) return cmd_report(rep_dir, rep_format);
    if (*cmp) return cmd_compare(cmp_dirs, cmp_metric);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ResumeMismatch& e) {
    std::cerr << "resume mismatch: " << e.what() << "\n";
    return 4;
  } catch (const ChainInterrupted& e) {
    std::cerr << "stopped: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
