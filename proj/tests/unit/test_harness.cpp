#include "doctest.h"

#include "tdrl/harness/plot.hpp"
#include "tdrl/harness/verify.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace tdrl;
using namespace tdrl::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tdrl_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A stage-1 cell small enough to train in well under a second.
ExperimentConfig tiny_abstraction(const fs::path& out) {
  ExperimentConfig c;
  c.set_json("out_dir", out.string());
  c.set_json("gridworld.size", 3);
  c.set_json("gridworld.samples", 200);
  c.set_json("abstraction.codebook_size", 4);
  c.set_json("abstraction.batch", 32);
  c.set_json("abstraction.steps", 20);
  return c;
}

RunManifest fixture_run(std::uint64_t seed, int M, const Series& curve) {
  RunManifest m;
  m.run_id = "fixture" + std::to_string(seed) + "_" + std::to_string(M);
  m.module = "abstraction";
  m.seed = seed;
  ExperimentConfig c;
  c.set_json("seed", seed);
  c.set_json("abstraction.codebook_size", M);
  m.config = c.doc();
  m.metrics["loss"] = curve;
  m.summary["purity"] = 0.5;
  return m;
}

int count(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("levenshtein") {
  CHECK(levenshtein("", "") == 0);
  CHECK(levenshtein("abc", "") == 3);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("seed", "seed") == 0);
}

TEST_CASE("config: every default is documented and every leaf is settable") {
  const auto docs = key_docs();
  const auto leaves = leaf_paths();
  CHECK(docs.size() == leaves.size() + 1);  // plus the sweep block
  for (const auto& d : docs) CHECK_FALSE(d.doc.empty());
  ExperimentConfig c;
  for (const auto& p : leaves) CHECK_NOTHROW(c.set_json(p, c.get(p)));
  CHECK_NOTHROW(c.abstraction());
  CHECK_NOTHROW(c.dqn());
  CHECK_NOTHROW(c.dg());
  CHECK_NOTHROW(c.generator());
  CHECK(c.dqn().eval_seed == dqn::DqnConfig{}.eval_seed);
}

TEST_CASE("config: unknown keys are rejected with the nearest valid keys") {
  ExperimentConfig c;
  try {
    c.set("abstraction.codebok_size", "5");
    FAIL("accepted a misspelt key");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'abstraction.codebook_size'") != std::string::npos);
    CHECK(msg.find("did you mean") != std::string::npos);
  }
  CHECK_THROWS_AS(ExperimentConfig::parse(R"({"dqn": {"gama": 0.9}})"), ConfigError);
  try {
    ExperimentConfig::parse(R"({"dqn": {"gama": 0.9}})");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dqn.gamma") != std::string::npos);
  }
  CHECK_THROWS_AS(ExperimentConfig::parse(R"({"sweep": {"sed": [1, 2]}})"), ConfigError);
  CHECK_THROWS_AS(c.set("dqn", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("dqn.steps", "lots"), ConfigError);
  CHECK_THROWS_AS(c.set("dqn.steps", "1.5"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("{not json"), ConfigError);
  c.set("dqn.gamma", "1");  // integers are valid where a float is expected
  CHECK(c.get("dqn.gamma") == 1);
}

TEST_CASE("config: ARTIFACT_ environment overrides") {
  ExperimentConfig c;
  c.apply_env({{"ARTIFACT_ABSTRACTION_CODEBOOK_SIZE", "50"}, {"ARTIFACT_DG_METHOD", "cdann"}, {"HOME", "/x"}});
  CHECK(c.abstraction().codebook_size == 50);
  CHECK(c.dg().method == dg::Method::Cdann);
  CHECK_THROWS_AS(c.apply_env({{"ARTIFACT_ABSTRACTION_CODEBOOK", "5"}}), ConfigError);
  CHECK_THROWS_AS(c.apply_env({{"ARTIFACT_DQN_GAMMA", "high"}}), ConfigError);
}

TEST_CASE("config: parse(serialize(c)) == c") {
  ExperimentConfig a;
  CHECK(ExperimentConfig::parse(a.serialize()) == a);
  a.set("module", "dg");
  a.set("dg.method", "dann");
  a.set("generator.radius", "3.5");
  a.set("sweep.seed", "[0, 1]");
  a.set("sweep.dg.multiplier", "[2, 4, 8]");
  CHECK(ExperimentConfig::parse(a.serialize()) == a);
  for (const auto& cell : a.expand()) CHECK(ExperimentConfig::parse(cell.serialize()) == cell);
  const auto profile = tradeoff_config(dqn::TradeoffProfile::ci(), "runs");
  CHECK(ExperimentConfig::parse(profile.serialize()) == profile);
}

TEST_CASE("sweep expansion: empty axes give one cell, 2 seeds x 3 M give 6") {
  ExperimentConfig c;
  CHECK(c.expand().size() == 1);
  CHECK(c.expand().front().sweep_axes().empty());
  c.set("sweep.seed", "[0, 1]");
  c.set("sweep.abstraction.codebook_size", "[4, 8, 16]");
  const auto cells = c.expand();
  REQUIRE(cells.size() == 6);
  // Sorted axes, last axis fastest.
  CHECK(cells[0].seed() == 0);
  CHECK(cells[1].seed() == 1);
  CHECK(cells[0].abstraction().codebook_size == 4);
  CHECK(cells[2].abstraction().codebook_size == 8);
  std::set<std::string> ids;
  for (const auto& cell : cells) ids.insert(run_id(cell));
  CHECK(ids.size() == 6);
  CHECK_THROWS_AS(c.set("sweep.seed", "[]"), ConfigError);
  CHECK_THROWS_AS(c.set("sweep.seed", "3"), ConfigError);
}

TEST_CASE("run: one manifest per cell, content-addressed, no silent overwrite") {
  const auto out = scratch("run");
  ExperimentConfig c = tiny_abstraction(out);
  c.set("sweep.seed", "[0, 1]");
  c.set("sweep.abstraction.codebook_size", "[2, 3, 4]");
  const auto first = run(c);
  REQUIRE(first.manifests.size() == 6);
  CHECK(first.failed() == 0);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(fs::exists(first.dirs[i] / kManifestName));
    CHECK(fs::exists(first.dirs[i] / "timestamp.txt"));
    CHECK(fs::exists(first.dirs[i] / "model.ckpt"));
    CHECK(first.dirs[i].filename().string() == "abstraction-" + first.manifests[i].run_id);
    CHECK(first.manifests[i].metrics.count("loss_total") == 1);
    CHECK(first.manifests[i].summary.contains("purity"));
  }
  const std::string before = slurp(first.dirs[3] / kManifestName);

  CHECK_THROWS_AS(run(c), RunExistsError);
  const auto again = run(c, {1, true, {}});
  for (std::size_t i = 0; i < 6; ++i) CHECK(again.manifests[i].run_id == first.manifests[i].run_id);
  CHECK(slurp(again.dirs[3] / kManifestName) == before);

  // Moving the output root changes neither the id nor the manifest bytes.
  ExperimentConfig moved = c;
  moved.set_json("out_dir", (out / "elsewhere").string());
  const auto third = run(moved);
  CHECK(third.manifests[3].run_id == first.manifests[3].run_id);
  CHECK(slurp(third.dirs[3] / kManifestName) == before);
  fs::remove_all(out);
}

TEST_CASE("run: a failing cell is recorded and its siblings still run") {
  const auto out = scratch("fail");
  ExperimentConfig c = tiny_abstraction(out);
  c.set("sweep.abstraction.codebook_size", "[-1, 3]");
  const auto r = run(c);
  REQUIRE(r.manifests.size() == 2);
  CHECK(r.manifests[0].status == "failed");
  CHECK(r.manifests[0].error.find("codebook size") != std::string::npos);
  CHECK(r.manifests[1].ok());
  CHECK(r.failed() == 1);
  CHECK(load_manifest(r.dirs[0]).status == "failed");
  fs::remove_all(out);
}

TEST_CASE("run: forked workers write the same manifests as a serial run") {
  const auto a = scratch("serial");
  const auto b = scratch("forked");
  ExperimentConfig c = tiny_abstraction(a);
  c.set("sweep.seed", "[0, 1, 2]");
  const auto serial = run(c);
  c.set_json("out_dir", b.string());
  const auto forked = run(c, {2, false, {}});
  REQUIRE(forked.manifests.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(forked.manifests[i].ok());
    CHECK(slurp(serial.dirs[i] / kManifestName) == slurp(forked.dirs[i] / kManifestName));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("manifest: JSON round trip and discovery") {
  const auto out = scratch("manifest");
  RunManifest m = fixture_run(3, 8, {{0, 1.5}, {10, -2.25}});
  m.status = "numeric_abort";
  m.error = "loss became NaN";
  m.files = {"a.csv"};
  write_manifest(out / "x", m);
  write_manifest(out / "y" / "z", fixture_run(4, 8, {{0, 1.0}}));
  const auto back = load_manifest(out / "x");
  CHECK(back.to_json() == m.to_json());
  CHECK(back.metrics.at("loss")[1].second == -2.25);
  CHECK(find_manifests({out}).size() == 2);
  CHECK_THROWS_AS(find_manifests({out / "missing"}), ContractError);
  fs::remove_all(out);
}

TEST_CASE("dqn cell reproduces the library tradeoff cell") {
  const auto out = scratch("dqn");
  ExperimentConfig c;
  c.set_json("module", "dqn");
  c.set_json("out_dir", out.string());
  c.set_json("seed", 2);
  c.set_json("gridworld.size", 4);
  c.set_json("gridworld.max_steps", 30);
  c.set_json("gridworld.samples", 300);
  c.set_json("abstraction.codebook_size", 8);
  c.set_json("dqn.steps", 400);
  c.set_json("dqn.learning_starts", 100);
  c.set_json("dqn.eval_every", 200);
  c.set_json("dqn.eval_episodes", 5);
  const auto r = run(c);
  REQUIRE(r.manifests.front().ok());
  const auto row = tradeoff_rows(r.manifests).front();
  const auto ref = dqn::run_cell({c.grid(), c.episode()}, c.abstraction(), c.dqn(), 300, 8, 2);
  CHECK(row.final_returns == ref.row.final_returns);
  CHECK(row.final_return == ref.row.final_return);
  CHECK(row.purity == ref.row.purity);
  CHECK(r.manifests.front().metrics.at("eval_return").size() == ref.stage2.curve.size());
  fs::remove_all(out);
}

TEST_CASE("tradeoff profile as a sweep") {
  const auto p = dqn::TradeoffProfile::ci();
  const auto cells = tradeoff_config(p, "runs").expand();
  CHECK(cells.size() == p.budgets.size() * p.codebook_sizes.size() * p.seeds.size());
  const auto& cell = cells.front();
  CHECK(cell.grid().size == p.env.grid.size);
  CHECK(cell.abstraction().latent_dim == p.stage1.latent_dim);
  CHECK(cell.abstraction().weights.lambda == p.stage1.weights.lambda);
  CHECK(cell.dqn().steps == p.stage2.steps);
  CHECK(cell.dqn().eval_seed == p.stage2.eval_seed);
}

TEST_CASE("plot: 5 seeds give a +-1 std band matching a hand-computed std") {
  std::vector<RunManifest> runs;
  for (int s = 0; s < 5; ++s) runs.push_back(fixture_run(s, 8, {{0, 1.0 + s}, {100, 10.0}}));
  const auto rows = aggregate(runs, {"loss", "", "", ""});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n == 5);
  CHECK(rows[0].mean == doctest::Approx(3.0));
  // Values 1..5: squared deviations 4+1+0+1+4 = 10, sample variance 10/4.
  CHECK(rows[0].std == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
  CHECK(rows[1].std == 0.0);

  const auto out = scratch("plot");
  const auto files = plot(runs, {"loss", "", "", ""}, out / "fig");
  std::ifstream csv(files.csv);
  std::string header, line;
  std::getline(csv, header);
  std::getline(csv, line);
  CHECK(header == "group,step,mean,std,n");
  std::istringstream fields(line);
  std::string group, step, mean, sd, n;
  std::getline(fields, group, ',');
  std::getline(fields, step, ',');
  std::getline(fields, mean, ',');
  std::getline(fields, sd, ',');
  std::getline(fields, n, ',');
  CHECK(std::stod(sd) == std::sqrt(2.5));
  CHECK(n == "5");
  CHECK(count(slurp(files.svg), "<polygon") == 1);
  fs::remove_all(out);
}

TEST_CASE("plot: a single run is a line without a band") {
  const auto svg = render_svg(aggregate({fixture_run(0, 8, {{0, 1.0}, {1, 2.0}})}, {"loss", "", "", ""}), {"loss", "", "", ""});
  CHECK(count(svg, "<polyline") == 1);
  CHECK(count(svg, "<polygon") == 0);
}

TEST_CASE("plot: grouping by codebook size draws one curve per value") {
  std::vector<RunManifest> runs;
  for (int M : {50, 100, 500})
    for (int s = 0; s < 2; ++s) runs.push_back(fixture_run(s, M, {{0, M + s * 1.0}, {1, M + 2.0}}));
  const PlotSpec spec{"loss", "abstraction.codebook_size", "", ""};
  const auto rows = aggregate(runs, spec);
  CHECK(rows.size() == 6);
  CHECK(rows[0].group == "50");
  CHECK(rows[4].group == "500");  // numeric, not lexicographic, order
  const auto svg = render_svg(rows, spec);
  CHECK(count(svg, "<polyline") == 3);
  CHECK(svg.find("abstraction.codebook_size=100") != std::string::npos);

  // With an x axis each run contributes its last value.
  const auto by_m = aggregate(runs, {"loss", "", "abstraction.codebook_size", ""});
  REQUIRE(by_m.size() == 3);
  CHECK(by_m[1].step == 100.0);
  CHECK(by_m[1].mean == 102.0);
}

TEST_CASE("plot: a missing metric names the available ones") {
  try {
    aggregate({fixture_run(0, 8, {{0, 1.0}})}, {"reward", "", "", ""});
    FAIL("missing metric accepted");
  } catch (const MetricMissingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'reward'") != std::string::npos);
    CHECK(msg.find("loss") != std::string::npos);
    CHECK(msg.find("purity") != std::string::npos);
  }
  // Summary scalars are plottable too.
  CHECK(aggregate({fixture_run(0, 8, {{0, 1.0}})}, {"purity", "", "", ""}).front().mean == 0.5);
}

TEST_CASE("verify ot: passes on this build, fails by name under a sign-flipped Sinkhorn") {
  const auto out = scratch("verify");
  VerifyOptions opts;
  opts.out_dir = out;
  const auto good = verify("ot", opts);
  CHECK(good.pass());
  CHECK(fs::exists(out / "ot" / "report.json"));
  const auto report = Json::parse(slurp(out / "ot" / "report.json"));
  CHECK(report.at("pass") == true);
  CHECK(report.at("checks").size() == good.checks.size());

  opts.fault = "sinkhorn-sign-flip";
  const auto bad = verify("ot", opts);
  CHECK_FALSE(bad.pass());
  const auto failed = bad.failures();
  CHECK(std::find(failed.begin(), failed.end(), "sinkhorn_matches_exact") != failed.end());
  CHECK(bad.find("exact_matches_lp_oracle")->pass);
  CHECK(Json::parse(slurp(out / "ot" / "report.json")).at("failures").size() == failed.size());

  opts.fault = "bogus";
  CHECK_THROWS_AS(verify("ot", opts), ConfigError);
  CHECK_THROWS_AS(verify("nope", {}), ConfigError);
  fs::remove_all(out);
}
