// Command-line front end: data collection, training, sweeps, suites, plots.

#include "tdrl/harness/plot.hpp"
#include "tdrl/harness/verify.hpp"
#include "tdrl/ot/exact.hpp"
#include "tdrl/ot/sinkhorn.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

using namespace tdrl;
using namespace tdrl::harness;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kSuiteFailure = 2, kNumericAbort = 3 };

void log_line(const std::string& s) { std::cerr << s << std::endl; }

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig() : ExperimentConfig::load(path);
  cfg.apply_env(artifact_env());
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int status_exit(const RunOutcome& out) {
  if (out.numeric_abort()) return kNumericAbort;
  return out.failed() ? kSuiteFailure : kOk;
}

int run_and_report(const ExperimentConfig& cfg, int jobs, bool force) {
  const auto out = run(cfg, {jobs, force, log_line});
  for (std::size_t i = 0; i < out.dirs.size(); ++i) {
    const auto& m = out.manifests[i];
    std::cout << m.status << "  " << out.dirs[i].string();
    if (!m.ok()) std::cout << "  " << m.error;
    std::cout << "\n";
  }
  return status_exit(out);
}

void print_summary(const RunManifest& m) {
  for (const auto& [k, v] : m.summary.items()) {
    if (v.is_array() && v.size() > 4) continue;
    std::cout << "  " << k << " = " << v.dump() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-representation experiments: data, training, sweeps, verification suites and plots"};
  app.require_subcommand(1);

  // collect
  auto* collect = app.add_subcommand("collect", "Record random-walk transitions from the pixel gridworld");
  int c_grid = 10, c_steps = 30000, c_px = 3;
  std::uint64_t c_seed = 0;
  double c_noise = 0.1, c_reset = gridworld::kDefaultResetProb;
  std::string c_out;
  collect->add_option("--grid", c_grid, "grid side in cells")->capture_default_str();
  collect->add_option("--steps", c_steps, "transitions to record")->capture_default_str();
  collect->add_option("--seed", c_seed)->capture_default_str();
  collect->add_option("--noise", c_noise, "pixel noise sd")->capture_default_str();
  collect->add_option("--cell-px", c_px)->capture_default_str();
  collect->add_option("--reset-prob", c_reset)->capture_default_str();
  collect->add_option("--out", c_out, "dataset file")->required();

  // train-abstraction
  auto* ta = app.add_subcommand("train-abstraction", "Train the stage-1 encoder and codebook on a recorded dataset");
  std::string ta_data, ta_out = "abstraction-run", ta_config;
  int ta_m = 100;
  double ta_lambda = 100.0;
  std::uint64_t ta_seed = 0;
  std::vector<std::string> ta_sets;
  ta->add_option("--data", ta_data, "dataset written by collect")->required();
  ta->add_option("--M", ta_m, "codebook size; 0 trains the continuous baseline")->capture_default_str();
  ta->add_option("--lambda", ta_lambda, "transport term weight")->capture_default_str();
  ta->add_option("--seed", ta_seed)->capture_default_str();
  ta->add_option("--config", ta_config, "config file for the remaining abstraction.* keys");
  ta->add_option("--set", ta_sets, "key=value override (repeatable)");
  ta->add_option("--out", ta_out, "output directory")->capture_default_str();

  // train-dqn
  auto* td = app.add_subcommand("train-dqn", "Train DQN on a frozen abstraction checkpoint");
  std::string td_ckpt, td_goal, td_out = "dqn-run", td_config;
  int td_steps = 20000, td_grid = 10;
  std::uint64_t td_seed = 0;
  std::vector<std::string> td_sets;
  td->add_option("--abstraction", td_ckpt, "model.ckpt from train-abstraction")->required();
  td->add_option("--goal", td_goal, "goal cell as R,C")->required();
  td->add_option("--steps", td_steps)->capture_default_str();
  td->add_option("--seed", td_seed)->capture_default_str();
  td->add_option("--grid", td_grid, "grid side the checkpoint was trained on")->capture_default_str();
  td->add_option("--config", td_config, "config file for the remaining dqn.* and gridworld.* keys");
  td->add_option("--set", td_sets, "key=value override (repeatable)");
  td->add_option("--out", td_out, "output directory")->capture_default_str();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run every cell of a config's sweep grid, one manifest per cell");
  std::string sw_profile, sw_config, sw_out = "runs";
  std::vector<std::string> sw_sets;
  int sw_jobs = 1;
  bool sw_force = false;
  auto* sw_prof = sw->add_option("--profile", sw_profile, "budget x codebook-size tradeoff grid")
                      ->check(CLI::IsMember({"ci", "full"}));
  sw->add_option("--config", sw_config, "experiment config file")->excludes(sw_prof);
  sw->add_option("--set", sw_sets, "key=value override, including sweep.<key>=[...] (repeatable)");
  sw->add_option("--jobs", sw_jobs, "parallel worker processes")->capture_default_str();
  sw->add_flag("--force", sw_force, "overwrite existing run directories");
  sw->add_option("--out", sw_out, "output root for --profile")->capture_default_str();

  // dg-toy
  auto* dgt = app.add_subcommand("dg-toy", "Train one domain-generalization model on the synthetic multi-domain data");
  std::string dg_method = "fdann", dg_out = "runs", dg_config;
  int dg_mult = 4;
  double dg_lambda = 0.1;
  std::uint64_t dg_seed = 0;
  std::vector<std::string> dg_sets;
  bool dg_force = false;
  dgt->add_option("--method", dg_method)->check(CLI::IsMember({"erm", "dann", "cdann", "fdann"}))->capture_default_str();
  dgt->add_option("--multiplier", dg_mult, "fine codewords per class")->capture_default_str();
  dgt->add_option("--lambda", dg_lambda)->capture_default_str();
  dgt->add_option("--seed", dg_seed)->capture_default_str();
  dgt->add_option("--config", dg_config);
  dgt->add_option("--set", dg_sets, "key=value override (repeatable)");
  dgt->add_option("--out", dg_out, "output root")->capture_default_str();
  dgt->add_flag("--force", dg_force, "overwrite an existing run directory");

  // verify
  auto* vf = app.add_subcommand("verify", "Run a property/oracle suite and write a JSON report");
  std::string vf_suite, vf_out = "verify", vf_scale = "ci", vf_fault;
  int vf_jobs = 1;
  std::vector<std::string> suites = suite_names();
  suites.push_back("all");
  vf->add_option("suite", vf_suite)->required()->check(CLI::IsMember(suites));
  vf->add_option("--out", vf_out)->capture_default_str();
  vf->add_option("--scale", vf_scale, "rl suite scale")->check(CLI::IsMember({"ci", "full"}))->capture_default_str();
  vf->add_option("--fault", vf_fault, "inject a known defect (negative control)")->check(CLI::IsMember(fault_names()));
  vf->add_option("--jobs", vf_jobs, "parallel worker processes for run-based checks")->capture_default_str();

  // plot
  auto* pl = app.add_subcommand("plot", "Aggregate manifests into a mean +- std CSV and SVG");
  std::vector<std::string> pl_paths;
  PlotSpec spec;
  std::string pl_out = "plot";
  pl->add_option("manifests", pl_paths, "manifest files or directories searched recursively")->required();
  pl->add_option("--metric", spec.metric)->required();
  pl->add_option("--group-by", spec.group_by, "config key, one curve per value (e.g. abstraction.codebook_size)");
  pl->add_option("--x", spec.x_axis, "config key for the x axis; plots each run's last value");
  pl->add_option("--title", spec.title);
  pl->add_option("--out", pl_out, "output prefix for .csv and .svg")->capture_default_str();

  // ot-bench
  auto* ob = app.add_subcommand("ot-bench", "Time the exact solver against Sinkhorn on random instances");
  std::vector<int> ob_sizes{8, 16, 32, 64};
  double ob_eps = 0.01;
  int ob_reps = 5;
  std::uint64_t ob_seed = 0;
  std::string ob_out = "ot_bench.csv";
  ob->add_option("--sizes", ob_sizes)->delimiter(',')->capture_default_str();
  ob->add_option("--epsilon-factor", ob_eps, "Sinkhorn epsilon relative to the mean cost")->capture_default_str();
  ob->add_option("--reps", ob_reps)->capture_default_str();
  ob->add_option("--seed", ob_seed)->capture_default_str();
  ob->add_option("--out", ob_out)->capture_default_str();

  // config
  auto* cf = app.add_subcommand("config", "Print the resolved config, or every key with its documentation");
  std::string cf_config;
  std::vector<std::string> cf_sets;
  bool cf_docs = false;
  cf->add_option("--config", cf_config);
  cf->add_option("--set", cf_sets, "key=value override (repeatable)");
  cf->add_flag("--docs", cf_docs, "list keys, defaults and documentation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (collect->parsed()) {
      gridworld::GridConfig g{c_grid, c_noise, c_px};
      g.validate();
      const auto batch = gridworld::collect_random_walk(g, c_seed, c_steps, c_reset);
      gridworld::save_dataset(c_out, batch);
      std::cout << "wrote " << batch.size() << " transitions to " << c_out << "\n";
      return kOk;
    }

    if (ta->parsed()) {
      ExperimentConfig cfg = load_config(ta_config, ta_sets);
      cfg.set_json("module", "abstraction");
      cfg.set_json("seed", ta_seed);
      cfg.set_json("abstraction.codebook_size", ta_m);
      cfg.set_json("abstraction.lambda", ta_lambda);
      const auto data = gridworld::load_dataset(ta_data);
      cfg.set_json("gridworld.size", data.grid.size);
      cfg.set_json("gridworld.cell_px", data.grid.cell_px);
      cfg.set_json("gridworld.noise_sd", data.grid.noise_sd);
      cfg.set_json("gridworld.samples", data.size());
      RunManifest m;
      m.run_id = run_id(cfg);
      m.module = "abstraction";
      m.seed = ta_seed;
      m.config = cfg.doc();
      m.config.erase("out_dir");
      auto& total = m.metrics["loss_total"];
      const auto result = abstraction::train_abstraction(data, cfg.abstraction(), [&](const abstraction::EpochMetrics& e) {
        total.emplace_back(e.step, e.total);
        std::cerr << "epoch " << e.epoch << " step " << e.step << " total " << e.total << "\n";
      });
      fs::create_directories(ta_out);
      abstraction::save_model(fs::path(ta_out) / "model.ckpt", result.model);
      const auto rows = abstraction::latent_map(result.model, data.grid, 10, ta_seed);
      abstraction::write_latent_csv(fs::path(ta_out) / "latents.csv", rows);
      m.files = {"model.ckpt", "latents.csv"};
      if (result.model.codebook) {
        m.summary["purity"] = abstraction::purity(result.model, data.x, data.s, data.grid).value();
        m.summary["stability"] = abstraction::stability(rows);
        m.summary["distinct_codewords"] = abstraction::distinct_codewords(rows);
      }
      m.summary["steps"] = result.steps;
      write_manifest(ta_out, m);
      std::cout << "wrote " << ta_out << "\n";
      print_summary(m);
      return kOk;
    }

    if (td->parsed()) {
      ExperimentConfig cfg = load_config(td_config, td_sets);
      int row = 0, col = 0;
      if (std::sscanf(td_goal.c_str(), "%d,%d", &row, &col) != 2) throw ConfigError("--goal expects R,C");
      cfg.set_json("module", "dqn");
      cfg.set_json("seed", td_seed);
      cfg.set_json("dqn.steps", td_steps);
      cfg.set_json("gridworld.size", td_grid);
      cfg.set_json("gridworld.goal_row", row);
      cfg.set_json("gridworld.goal_col", col);
      const auto model = abstraction::load_model(td_ckpt);
      const dqn::EnvConfig env{cfg.grid(), cfg.episode()};
      if (model.input_dim() != env.grid.pixels()) {
        throw ConfigError("checkpoint expects " + std::to_string(model.input_dim()) + " pixels, grid gives " +
                          std::to_string(env.grid.pixels()) + "; check --grid");
      }
      const auto r = dqn::train_dqn(dqn::abstraction_features(model), model.latent_dim(), env, cfg.dqn(), td_seed);
      fs::create_directories(td_out);
      dqn::save_policy(fs::path(td_out) / "policy.ckpt", r.qnet);
      RunManifest m;
      m.run_id = run_id(cfg);
      m.module = "dqn";
      m.seed = td_seed;
      m.config = cfg.doc();
      m.config.erase("out_dir");
      for (const auto& p : r.curve) {
        m.metrics["eval_return"].emplace_back(p.step, p.mean_return);
        m.metrics["eval_success"].emplace_back(p.step, p.success_rate);
      }
      m.summary = {{"final_return", r.final_return()}, {"auc", r.auc()}, {"random_baseline", r.random_baseline},
                   {"diverged", r.diverged}};
      m.files = {"policy.ckpt"};
      write_manifest(td_out, m);
      std::cout << "wrote " << td_out << "\n";
      print_summary(m);
      return kOk;
    }

    if (sw->parsed()) {
      if (!sw_profile.empty()) {
        const auto profile = sw_profile == "full" ? dqn::TradeoffProfile::full() : dqn::TradeoffProfile::ci();
        ExperimentConfig cfg = tradeoff_config(profile, sw_out);
        for (const auto& kv : sw_sets) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
          cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        const auto out = run(cfg, {sw_jobs, sw_force, log_line});
        if (out.failed()) {
          std::cerr << out.failed() << " cells failed\n";
          return status_exit(out);
        }
        const auto rows = tradeoff_rows(out.manifests);
        const fs::path root(sw_out);
        dqn::write_tradeoff_csv(root / ("tradeoff_" + sw_profile + ".csv"), rows);
        plot(out.manifests, {"final_return", "abstraction.codebook_size", "gridworld.samples", "final return vs sample budget"},
             root / ("tradeoff_" + sw_profile + "_final_return"));
        for (int budget : profile.budgets) {
          std::vector<RunManifest> subset;
          for (const auto& m : out.manifests)
            if (m.config.at("gridworld").at("samples").get<int>() == budget) subset.push_back(m);
          plot(subset, {"eval_return", "abstraction.codebook_size", "", "learning curves, " + std::to_string(budget) + " samples"},
               root / ("tradeoff_" + sw_profile + "_curves_" + std::to_string(budget)));
        }
        const auto v = dqn::judge_tradeoff(profile, rows);
        for (const auto& n : v.notes) std::cout << n << "\n";
        std::cout << "small budget " << (v.small_budget_discrete_wins ? "PASS" : "FAIL") << ", large budget "
                  << (v.large_budget_continuous_close ? "PASS" : "FAIL") << ", middle budget "
                  << (v.middle_budget_monotone ? "PASS" : "FAIL") << "\n";
        return kOk;
      }
      return run_and_report(load_config(sw_config, sw_sets), sw_jobs, sw_force);
    }

    if (dgt->parsed()) {
      ExperimentConfig cfg = load_config(dg_config, dg_sets);
      cfg.set_json("module", "dg");
      cfg.set_json("out_dir", dg_out);
      cfg.set_json("seed", dg_seed);
      cfg.set_json("dg.method", dg_method);
      cfg.set_json("dg.multiplier", dg_mult);
      cfg.set_json("dg.lambda", dg_lambda);
      const auto out = run(cfg, {1, dg_force, log_line});
      const auto& m = out.manifests.front();
      if (!m.ok()) {
        std::cerr << m.status << ": " << m.error << "\n";
        return status_exit(out);
      }
      const fs::path csv = fs::path(dg_out) / "dg_toy.csv";
      const bool fresh = !fs::exists(csv);
      std::ofstream f(csv, std::ios::app);
      if (fresh) f << "method,seed,target_acc\n";
      f << dg_method << "," << dg_seed << "," << m.summary.at("target_accuracy").get<double>() << "\n";
      std::cout << "wrote " << out.dirs.front().string() << " and appended " << csv.string() << "\n";
      print_summary(m);
      return kOk;
    }

    if (vf->parsed()) {
      VerifyOptions opts;
      opts.out_dir = vf_out;
      opts.scale = vf_scale;
      opts.fault = vf_fault;
      opts.jobs = vf_jobs;
      opts.log = log_line;
      const std::vector<std::string> todo = vf_suite == "all" ? suite_names() : std::vector<std::string>{vf_suite};
      bool ok = true;
      for (const auto& s : todo) {
        const auto rep = verify(s, opts);
        std::cout << s << ": " << (rep.pass() ? "PASS" : "FAIL");
        for (const auto& f : rep.failures()) std::cout << "  violated: " << f;
        std::cout << "  (report " << (fs::path(vf_out) / s / "report.json").string() << ")\n";
        ok = ok && rep.pass();
      }
      return ok ? kOk : kSuiteFailure;
    }

    if (pl->parsed()) {
      std::vector<fs::path> roots(pl_paths.begin(), pl_paths.end());
      std::vector<RunManifest> runs;
      for (const auto& p : find_manifests(roots)) runs.push_back(load_manifest(p));
      if (runs.empty()) throw ContractError("no manifests found");
      const auto files = plot(runs, spec, pl_out);
      std::cout << "wrote " << files.csv.string() << " and " << files.svg.string() << "\n";
      return kOk;
    }

    if (ob->parsed()) {
      std::ofstream csv(ob_out);
      csv << "n,rep,exact_value,exact_ms,sinkhorn_value,sinkhorn_ms,relative_gap,sinkhorn_iterations\n";
      Rng rng(ob_seed);
      for (int n : ob_sizes) {
        for (int rep = 0; rep < ob_reps; ++rep) {
          Tensord x(n, 2), y(n, 2);
          for (Eigen::Index i = 0; i < x.size(); ++i) {
            x.data()[i] = rng.uniform();
            y.data()[i] = rng.uniform();
          }
          const auto mu = ot::Measure::uniform(x);
          const auto nu = ot::Measure::uniform(y);
          const Tensord c = ot::cost_matrix(x, y, ot::CostKind::SquaredEuclidean);
          auto t0 = std::chrono::steady_clock::now();
          const auto ex = ot::exact_wasserstein(mu, nu, c);
          auto t1 = std::chrono::steady_clock::now();
          const auto sk = ot::sinkhorn(mu, nu, c, {ot::default_epsilon(c, ob_eps), 100000, 1e-6});
          auto t2 = std::chrono::steady_clock::now();
          const double ems = std::chrono::duration<double, std::milli>(t1 - t0).count();
          const double sms = std::chrono::duration<double, std::milli>(t2 - t1).count();
          csv << n << "," << rep << "," << ex.value << "," << ems << "," << sk.value << "," << sms << ","
              << (sk.value - ex.value) / std::max(ex.value, 1e-300) << "," << sk.iterations << "\n";
          std::cout << "n " << n << " rep " << rep << "  exact " << ems << " ms  sinkhorn " << sms << " ms\n";
        }
      }
      std::cout << "wrote " << ob_out << "\n";
      return kOk;
    }

    if (cf->parsed()) {
      if (cf_docs) {
        for (const auto& k : key_docs()) {
          std::string ptr = "/" + k.path;
          std::replace(ptr.begin(), ptr.end(), '.', '/');
          std::cout << k.path << " = " << default_config().at(Json::json_pointer(ptr)).dump() << "\n    " << k.doc << "\n";
        }
        return kOk;
      }
      std::cout << load_config(cf_config, cf_sets).serialize() << "\n";
      return kOk;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kNumericAbort;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSuiteFailure;
  }
  return kUsage;
}
