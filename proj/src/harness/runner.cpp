#include "tdrl/harness/runner.hpp"

#include "tdrl/core/stats.hpp"
#include "tdrl/theory/lab.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

namespace tdrl::harness {

namespace fs = std::filesystem;

Json RunManifest::to_json() const {
  Json m = Json::object();
  for (const auto& [name, series] : metrics) {
    Json pts = Json::array();
    for (const auto& [step, value] : series) pts.push_back({step, value});
    m[name] = std::move(pts);
  }
  return {{"run_id", run_id},   {"module", module}, {"seed", seed},      {"artifact_version", artifact_version},
          {"config", config},   {"status", status}, {"error", error},    {"metrics", std::move(m)},
          {"summary", summary}, {"files", files}};
}

RunManifest RunManifest::from_json(const Json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.module = j.at("module").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.artifact_version = j.at("artifact_version").get<std::string>();
    m.config = j.at("config");
    m.status = j.at("status").get<std::string>();
    m.error = j.at("error").get<std::string>();
    for (const auto& [name, pts] : j.at("metrics").items()) {
      Series s;
      for (const auto& p : pts) s.emplace_back(p.at(0).get<double>(), p.at(1).is_null() ? std::nan("") : p.at(1).get<double>());
      m.metrics[name] = std::move(s);
    }
    m.summary = j.at("summary");
    m.files = j.at("files").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw ContractError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string run_id(const ExperimentConfig& cfg) {
  Json canon = cfg.doc();
  canon.erase("out_dir");
  // nlohmann orders object keys, so dump() is canonical.
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon.dump() + "|" + kArtifactVersion)));
  return buf;
}

fs::path run_directory(const ExperimentConfig& cfg) {
  return fs::path(cfg.get("out_dir").get<std::string>()) / (cfg.module() + "-" + run_id(cfg));
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  fs::create_directories(dir);
  const fs::path tmp = dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << m.to_json().dump(2) << "\n";
  }
  fs::rename(tmp, dir / kManifestName);
}

RunManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kManifestName : path;
  std::ifstream in(file);
  if (!in) throw ContractError("cannot read manifest " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return RunManifest::from_json(Json::parse(ss.str()));
  } catch (const Json::parse_error& e) {
    throw ContractError("manifest " + file.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<fs::path> find_manifests(const std::vector<fs::path>& roots) {
  std::set<fs::path> found;
  for (const auto& r : roots) {
    if (fs::is_regular_file(r)) {
      found.insert(r);
    } else if (fs::is_directory(r)) {
      for (const auto& e : fs::recursive_directory_iterator(r)) {
        if (e.is_regular_file() && e.path().filename() == kManifestName) found.insert(e.path());
      }
    } else {
      throw ContractError("no such manifest or directory: " + r.string());
    }
  }
  return {found.begin(), found.end()};
}

int RunOutcome::failed() const {
  int n = 0;
  for (const auto& m : manifests) n += m.ok() ? 0 : 1;
  return n;
}

bool RunOutcome::numeric_abort() const {
  for (const auto& m : manifests)
    if (m.status == "numeric_abort") return true;
  return false;
}

namespace {

std::string iso_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

gridworld::TransitionBatch collect(const ExperimentConfig& cell) {
  const int samples = cell.get("gridworld.samples").get<int>();
  // Same data stream for every codebook size at a given (samples, seed).
  const std::uint64_t data_seed = Rng::mix(cell.seed() * 1000003ULL + static_cast<std::uint64_t>(samples));
  return gridworld::collect_random_walk(cell.grid(), data_seed, samples, cell.get("gridworld.reset_prob").get<double>());
}

abstraction::TrainResult train_stage1(const ExperimentConfig& cell, const gridworld::TransitionBatch& data, RunManifest& m,
                                      const std::string& prefix) {
  auto& inv = m.metrics[prefix + "loss_inverse"];
  auto& ratio = m.metrics[prefix + "loss_ratio"];
  auto& quant = m.metrics[prefix + "loss_quantize"];
  auto& total = m.metrics[prefix + "loss_total"];
  auto& additivity = m.metrics[prefix + "additivity_error"];
  auto result = abstraction::train_abstraction(data, cell.abstraction(), [&](const abstraction::EpochMetrics& e) {
    inv.emplace_back(e.step, e.inv);
    ratio.emplace_back(e.step, e.ratio);
    quant.emplace_back(e.step, e.quantize);
    total.emplace_back(e.step, e.total);
    additivity.emplace_back(e.step, e.max_additivity_error);
  });
  if (!cell.abstraction().discrete()) m.metrics.erase(prefix + "loss_quantize");
  return result;
}

void summarize_stage1(const ExperimentConfig& cell, const gridworld::TransitionBatch& data,
                      const abstraction::AbstractionModel& model, const fs::path& dir, RunManifest& m) {
  const auto grid = cell.grid();
  if (model.codebook) {
    const auto p = abstraction::purity(model, data.x, data.s, grid);
    m.summary["purity"] = p.value();
    m.summary["purity_by_cell"] = p.by_cell;
    m.summary["purity_by_codeword"] = p.by_codeword;
  }
  const auto rows = abstraction::latent_map(model, grid, 10, cell.seed());
  if (model.codebook) {
    m.summary["stability"] = abstraction::stability(rows);
    m.summary["distinct_codewords"] = abstraction::distinct_codewords(rows);
  }
  abstraction::save_model(dir / "model.ckpt", model);
  abstraction::write_latent_csv(dir / "latents.csv", rows);
  m.files.insert(m.files.end(), {"model.ckpt", "latents.csv"});
}

void run_abstraction(const ExperimentConfig& cell, const fs::path& dir, RunManifest& m) {
  const auto data = collect(cell);
  const auto result = train_stage1(cell, data, m, "");
  m.summary["steps"] = result.steps;
  summarize_stage1(cell, data, result.model, dir, m);
}

void run_dqn(const ExperimentConfig& cell, const fs::path& dir, RunManifest& m) {
  const auto data = collect(cell);
  const auto stage1 = train_stage1(cell, data, m, "stage1/");
  summarize_stage1(cell, data, stage1.model, dir, m);
  const dqn::EnvConfig env{cell.grid(), cell.episode()};
  const auto cfg = cell.dqn();
  const auto r = dqn::train_dqn(dqn::abstraction_features(stage1.model), stage1.model.latent_dim(), env, cfg, cell.seed());
  auto& ret = m.metrics["eval_return"];
  auto& success = m.metrics["eval_success"];
  auto& eps = m.metrics["epsilon"];
  for (const auto& p : r.curve) {
    ret.emplace_back(p.step, p.mean_return);
    success.emplace_back(p.step, p.success_rate);
    eps.emplace_back(p.step, p.epsilon);
  }
  m.summary["goal"] = {env.episode.goal.row, env.episode.goal.col};
  m.summary["final_return"] = r.final_return();
  m.summary["auc"] = r.auc();
  m.summary["random_baseline"] = r.random_baseline;
  m.summary["diverged"] = r.diverged;
  m.summary["final_returns"] = r.final_returns;
  dqn::save_policy(dir / "policy.ckpt", r.qnet);
  std::ofstream csv(dir / "curve.csv");
  csv << "step,mean_return,success_rate,epsilon\n";
  char buf[128];
  for (const auto& p : r.curve) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", p.step, p.mean_return, p.success_rate, p.epsilon);
    csv << buf;
  }
  m.files.insert(m.files.end(), {"policy.ckpt", "curve.csv"});
}

void run_dg(const ExperimentConfig& cell, const fs::path& dir, RunManifest& m) {
  const auto gen = cell.generator();
  const auto cfg = cell.dg();
  const auto data = dg::generate(gen, cell.get("generator.seed").get<std::uint64_t>() + cell.seed());
  const auto r = dg::train_dg(data, cfg, cell.seed());
  const double step = cfg.steps;
  m.metrics["target_accuracy"] = {{step, r.target_accuracy}};
  m.metrics["source_accuracy"] = {{step, r.source_accuracy}};
  m.summary["target_accuracy"] = r.target_accuracy;
  m.summary["source_accuracy"] = r.source_accuracy;
  m.summary["loss_classify"] = r.final_classify;
  m.summary["loss_codeword"] = r.final_codeword;
  m.summary["loss_align"] = r.final_align;
  // Classifier argmax against inner-product quantization over the columns of W.
  const Tensorf z = r.model.encoder.forward(data.target.x);
  m.summary["kclass_agreement"] = theory::kclass_equivalence(z, r.model.classifier.value).rate();
  if (r.model.fine) {
    const auto report = dg::mode_purity_report(r.model, data.pooled_sources(), gen.modes);
    m.summary["mode_purity"] = report.mean_purity;
    m.summary["mode_coverage"] = report.coverage;
    m.summary["used_codewords"] = report.used_codewords;
    std::ofstream csv(dir / "purity.csv");
    csv << "codeword,class,mode,count\n";
    for (std::size_t c = 0; c < report.histogram.size(); ++c) {
      for (std::size_t k = 0; k < report.histogram[c].size(); ++k) {
        csv << c << "," << k / static_cast<std::size_t>(gen.modes) << "," << k % static_cast<std::size_t>(gen.modes) << ","
            << report.histogram[c][k] << "\n";
      }
    }
    m.files.emplace_back("purity.csv");
  }
}

using Executor = void (*)(const ExperimentConfig&, const fs::path&, RunManifest&);

Executor executor_for(const std::string& module) {
  if (module == "abstraction") return run_abstraction;
  if (module == "dqn") return run_dqn;
  if (module == "dg") return run_dg;
  throw ConfigError("unknown module '" + module + "' (expected abstraction, dqn or dg)");
}

RunManifest blank_manifest(const ExperimentConfig& cell) {
  RunManifest m;
  m.run_id = run_id(cell);
  m.module = cell.module();
  m.seed = cell.seed();
  // The output location is not part of the experiment; leaving it out keeps
  // manifests of identical runs byte-identical wherever they are written.
  m.config = cell.doc();
  m.config.erase("out_dir");
  return m;
}

}  // namespace

RunManifest execute_cell(const ExperimentConfig& cell, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream ts(dir / "timestamp.txt");
    ts << iso_timestamp() << "\n";
  }
  RunManifest m = blank_manifest(cell);
  try {
    executor_for(cell.module())(cell, dir, m);
  } catch (const NumericError& e) {
    m.status = "numeric_abort";
    m.error = e.what();
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
  }
  write_manifest(dir, m);
  return m;
}

RunOutcome run(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (opts.jobs < 1) throw ConfigError("--jobs must be at least 1");
  const auto cells = cfg.expand();
  executor_for(cfg.module());
  RunOutcome out;
  std::set<fs::path> seen;
  for (const auto& c : cells) {
    const auto dir = run_directory(c);
    if (!seen.insert(dir).second) throw ConfigError("sweep produces the same cell twice: " + dir.string());
    if (fs::exists(dir / kManifestName) && !opts.force) {
      throw RunExistsError("run directory " + dir.string() + " already holds a manifest; pass --force to overwrite");
    }
    out.dirs.push_back(dir);
  }
  for (const auto& dir : out.dirs) {
    if (fs::exists(dir)) fs::remove_all(dir);
  }
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  if (opts.jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      log("cell " + std::to_string(i + 1) + "/" + std::to_string(cells.size()) + " " + out.dirs[i].string());
      out.manifests.push_back(execute_cell(cells[i], out.dirs[i]));
      if (!out.manifests.back().ok()) log("  " + out.manifests.back().status + ": " + out.manifests.back().error);
    }
    return out;
  }

  // One forked worker per cell, at most `jobs` alive. Each worker is the
  // only writer of its directory.
  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  auto reap_one = [&]() {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid <= 0) return;
    const std::size_t i = running.at(pid);
    running.erase(pid);
    const auto& dir = out.dirs[i];
    if (!fs::exists(dir / kManifestName)) {
      RunManifest m = blank_manifest(cells[i]);
      m.status = "failed";
      m.error = WIFSIGNALED(status) ? "worker killed by signal " + std::to_string(WTERMSIG(status))
                                    : "worker exited with status " + std::to_string(WEXITSTATUS(status));
      write_manifest(dir, m);
    }
    log("done " + dir.string());
  };
  while (next < cells.size() || !running.empty()) {
    if (next < cells.size() && static_cast<int>(running.size()) < opts.jobs) {
      std::fflush(nullptr);
      const pid_t pid = ::fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        try {
          execute_cell(cells[next], out.dirs[next]);
        } catch (...) {
          ::_exit(1);
        }
        ::_exit(0);
      }
      log("started cell " + std::to_string(next + 1) + "/" + std::to_string(cells.size()) + " " + out.dirs[next].string());
      running[pid] = next++;
    } else {
      reap_one();
    }
  }
  for (const auto& dir : out.dirs) out.manifests.push_back(load_manifest(dir));
  return out;
}

namespace {

void put_abstraction(ExperimentConfig& c, const abstraction::AbstractionConfig& a) {
  c.set_json("abstraction.latent_dim", a.latent_dim);
  c.set_json("abstraction.encoder_hidden", a.encoder_hidden);
  c.set_json("abstraction.head_hidden", a.head_hidden);
  c.set_json("abstraction.latent_activation", activation_name(a.latent_activation));
  c.set_json("abstraction.codebook_size", a.codebook_size);
  c.set_json("abstraction.alpha", a.weights.alpha);
  c.set_json("abstraction.beta", a.weights.beta);
  c.set_json("abstraction.eta", a.weights.eta);
  c.set_json("abstraction.lambda", a.weights.lambda);
  c.set_json("abstraction.solver", codebook::solver_name(a.solver));
  c.set_json("abstraction.init", codebook::init_strategy_name(a.init));
  c.set_json("abstraction.epsilon_factor", a.epsilon_factor);
  c.set_json("abstraction.lr", a.lr);
  c.set_json("abstraction.lr_decay", a.lr_decay);
  c.set_json("abstraction.batch", a.batch);
  c.set_json("abstraction.steps", a.steps);
  c.set_json("abstraction.warmup_fraction", a.warmup_fraction);
  c.set_json("abstraction.dead_patience", a.dead_patience);
}

void put_dqn(ExperimentConfig& c, const dqn::DqnConfig& d) {
  c.set_json("dqn.gamma", d.gamma);
  c.set_json("dqn.eps_start", d.eps_start);
  c.set_json("dqn.eps_end", d.eps_end);
  c.set_json("dqn.eps_decay_steps", d.eps_decay_steps);
  c.set_json("dqn.target_sync", d.target_sync);
  c.set_json("dqn.capacity", d.capacity);
  c.set_json("dqn.batch", d.batch);
  c.set_json("dqn.lr", d.lr);
  c.set_json("dqn.hidden", d.hidden);
  c.set_json("dqn.steps", d.steps);
  c.set_json("dqn.learning_starts", d.learning_starts);
  c.set_json("dqn.eval_every", d.eval_every);
  c.set_json("dqn.eval_episodes", d.eval_episodes);
  c.set_json("dqn.eval_seed", d.eval_seed);
}

}  // namespace

ExperimentConfig tradeoff_config(const dqn::TradeoffProfile& p, const fs::path& out_dir) {
  ExperimentConfig c;
  c.set_json("module", "dqn");
  c.set_json("out_dir", out_dir.string());
  c.set_json("gridworld.size", p.env.grid.size);
  c.set_json("gridworld.cell_px", p.env.grid.cell_px);
  c.set_json("gridworld.noise_sd", p.env.grid.noise_sd);
  c.set_json("gridworld.max_steps", p.env.episode.max_steps);
  put_abstraction(c, p.stage1);
  put_dqn(c, p.stage2);
  c.set_json("sweep.gridworld.samples", p.budgets);
  c.set_json("sweep.abstraction.codebook_size", p.codebook_sizes);
  c.set_json("sweep.seed", p.seeds);
  return c;
}

std::vector<dqn::TradeoffRow> tradeoff_rows(const std::vector<RunManifest>& manifests) {
  std::vector<dqn::TradeoffRow> rows;
  for (const auto& m : manifests) {
    if (m.module != "dqn") throw ContractError("tradeoff rows need dqn manifests, got " + m.module);
    if (!m.ok()) throw ContractError("run " + m.run_id + " did not complete: " + m.error);
    dqn::TradeoffRow r;
    r.budget = m.config.at("gridworld").at("samples").get<int>();
    r.M = m.config.at("abstraction").at("codebook_size").get<int>();
    r.seed = m.seed;
    r.final_return = m.summary.at("final_return").get<double>();
    r.auc = m.summary.at("auc").get<double>();
    r.purity = m.summary.value("purity", 0.0);
    r.diverged = m.summary.at("diverged").get<bool>();
    r.final_returns = m.summary.at("final_returns").get<std::vector<double>>();
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace tdrl::harness
