#include <doctest.h>

#include <array>
#include <cstdio>
#include <sstream>
#include <sys/wait.h>

#include "clh/checkpoint.hpp"
#include "clh/manifest.hpp"
#include "support.hpp"

using namespace clh;

namespace {

struct Cmd {
  int code = -1;
  std::string out;
};

Cmd run(const std::string& args) {
  const std::string cmd = std::string(CLH_BIN) + " " + args + " 2>&1";
  Cmd r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

struct Workspace {
  test::TempDir dir;
  std::filesystem::path catalog = dir / "catalog.csv";
  std::filesystem::path dil = dir / "dil.json";
  Workspace() {
    save_catalog(test::synthetic_catalog(12, 2, 40, 4), catalog, CatalogFormat::Csv);
    const auto r = run("build-timeline --catalog " + q(catalog) + " --scenario dil --tau 2 --seed 4 --out " + q(dil));
    REQUIRE_MESSAGE(r.code == 0, r.out);
  }
  std::string run_args(const std::string& strategy, const std::string& name) const {
    return "run --timeline " + q(dil) + " --catalog " + q(catalog) + " --strategy " + strategy +
           " --base-steps 40 --inc-steps 15 --root " + q(dir.path()) + " --out " + q(dir / name);
  }
};

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("build-timeline on the bundled catalog") {
  test::TempDir dir;
  const auto r = run("build-timeline --scenario lil --seed 7 --out " + q(dir / "lil.json"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("tau 11") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "lil.json"));
  CHECK(read_file(dir / "lil.summary.txt") == r.out);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 14);
  CHECK(ls[2].find("     11  ") != std::string::npos);
  const auto again = run("build-timeline --scenario lil --seed 7 --out " + q(dir / "again.json"));
  CHECK(read_file(dir / "lil.json") == read_file(dir / "again.json"));
  CHECK(run("build-timeline --scenario lil --tau 3 --out " + q(dir / "x.json")).code == 2);
  CHECK(run("build-timeline --scenario xil --out " + q(dir / "x.json")).code == 2);
}

TEST_CASE("build-timeline edge catalogs") {
  test::TempDir dir;
  save_catalog(test::synthetic_catalog(1, 6), dir / "one.csv", CatalogFormat::Csv);
  const auto one = run("build-timeline --catalog " + q(dir / "one.csv") + " --scenario dil --out " + q(dir / "d.json"));
  CHECK_MESSAGE(one.code == 0, one.out);
  save_catalog(test::synthetic_catalog(5, 2), dir / "five.csv", CatalogFormat::Csv);
  const auto five =
      run("build-timeline --catalog " + q(dir / "five.csv") + " --scenario lidil --out " + q(dir / "l.json"));
  CHECK(five.code == 2);
  CHECK(five.out.find("error") != std::string::npos);
}

TEST_CASE("run, report and compare") {
  Workspace ws;
  const auto inc = run(ws.run_args("incft", "incft"));
  REQUIRE_MESSAGE(inc.code == 0, inc.out);
  CHECK(inc.out.find("base model: trained") != std::string::npos);

  const auto ewc = run(ws.run_args("ewc", "ewc"));
  REQUIRE_MESSAGE(ewc.code == 0, ewc.out);
  CHECK(ewc.out.find("base model: reused from cache") != std::string::npos);
  CHECK(ewc.out.find("reference runs: reused from cache") != std::string::npos);

  const auto again = run(ws.run_args("incft", "incft") + " --resume");
  CHECK(again.code == 0);
  CHECK(again.out.find("already complete") != std::string::npos);

  const auto mismatch = run(ws.run_args("incft", "incft") + " --seed 5");
  CHECK(mismatch.code == 4);

  const auto table = run("report --run-dir " + q(ws.dir / "incft"));
  REQUIRE(table.code == 0);
  const auto rows = lines(table.out);
  REQUIRE(rows.size() == 5);
  CHECK(rows[2].find(" -  ") != std::string::npos);
  for (std::size_t i = 3; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::string ep, amer, fwt;
    in >> ep >> amer >> fwt;
    CHECK(fwt == "0");
  }
  const auto series = run("report --run-dir " + q(ws.dir / "incft") + " --format series");
  CHECK(series.out == read_file(ws.dir / "incft" / "metrics.csv"));

  const auto er = run(ws.run_args("er", "er"));
  REQUIRE(er.code == 0);
  const auto cmp = run("compare --run-dirs " + q(ws.dir / "er") + " " + q(ws.dir / "incft") + " --metric bwt");
  REQUIRE_MESSAGE(cmp.code == 0, cmp.out);
  const auto cl = lines(cmp.out);
  REQUIRE(cl.size() == 4);
  CHECK(cl[0] == "episode,er,incft");
  CHECK(cl[1] == "0,,");

  const auto twice = run("compare --run-dirs " + q(ws.dir / "incft") + " " + q(ws.dir / "incft") + " --metric amer");
  CHECK(lines(twice.out)[0] == "episode,incft@incft,incft@incft");

  const auto lil = ws.dir / "lil.json";
  REQUIRE(run("build-timeline --catalog " + q(ws.catalog) + " --scenario lil --out " + q(lil)).code == 0);
  const auto other = run("run --timeline " + q(lil) + " --catalog " + q(ws.catalog) +
                         " --strategy incft --base-steps 40 --inc-steps 15 --out " + q(ws.dir / "lil-incft"));
  REQUIRE_MESSAGE(other.code == 0, other.out);
  const auto bad = run("compare --run-dirs " + q(ws.dir / "incft") + " " + q(ws.dir / "lil-incft"));
  CHECK(bad.code == 2);
  CHECK(bad.out.find("different timelines") != std::string::npos);
}

TEST_CASE("run argument errors") {
  Workspace ws;
  const auto der = run(ws.run_args("der", "der"));
  CHECK(der.code == 2);
  for (const char* s : {"incft", "jointft", "ewc", "er", "mas", "adapters"}) CHECK(der.out.find(s) != std::string::npos);
  CHECK(run(ws.run_args("adapters", "ad")).code == 2);
  CHECK(run("run --timeline " + q(ws.dil) + " --strategy incft --out " + q(ws.dir / "bundled")).code == 2);
  CHECK(run("run --timeline " + q(ws.dir / "missing.json")).code != 0);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("interrupted run resumes through the CLI") {
  Workspace ws;
  const auto stop = run(ws.run_args("mas", "mas") + " --stop-after 1");
  CHECK(stop.code == 3);
  const auto resume = run(ws.run_args("mas", "mas") + " --resume");
  REQUIRE_MESSAGE(resume.code == 0, resume.out);
  CHECK(resume.out.find("resumed after episode 1") != std::string::npos);
  REQUIRE(run(ws.run_args("mas", "mas-direct")).code == 0);
  CHECK(read_file(ws.dir / "mas" / "result.json") == read_file(ws.dir / "mas-direct" / "result.json"));
}
