#include "tdrl/harness/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

extern char** environ;

namespace tdrl::harness {

namespace {

struct Entry {
  const char* path;
  Json value;
  const char* doc;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e = {
      {"module", "abstraction", "cell type: abstraction | dqn | dg"},
      {"seed", 0, "run seed; every random stream of a cell forks from it"},
      {"out_dir", "runs", "root directory for run directories"},
      {"gridworld.size", 10, "grid side in cells"},
      {"gridworld.cell_px", 3, "pixels per cell side"},
      {"gridworld.noise_sd", 0.1, "additive pixel noise sd, clipped to [0, 1]"},
      {"gridworld.reset_prob", 0.05, "per-step teleport probability of the data-collection walk"},
      {"gridworld.samples", 30000, "stage-1 transitions (the sample budget)"},
      {"gridworld.max_steps", 200, "episode step cap"},
      {"gridworld.goal_row", -1, "goal row; -1 draws the goal from the seed"},
      {"gridworld.goal_col", -1, "goal column; -1 draws the goal from the seed"},
      {"abstraction.latent_dim", 4, "latent width"},
      {"abstraction.encoder_hidden", 32, "encoder hidden width"},
      {"abstraction.head_hidden", 64, "inverse and ratio head hidden width"},
      {"abstraction.latent_activation", "identity", "encoder output activation: identity | tanh | relu"},
      {"abstraction.codebook_size", 100, "codewords M; 0 trains the continuous baseline"},
      {"abstraction.alpha", 1.0, "inverse-dynamics loss weight"},
      {"abstraction.beta", 1.0, "ratio loss weight"},
      {"abstraction.eta", 0.0, "smoothness weight; only 0 is supported"},
      {"abstraction.lambda", 100.0, "transport term weight"},
      {"abstraction.solver", "sinkhorn", "transport solver: sinkhorn | exact"},
      {"abstraction.init", "kmeans", "codebook seeding: gaussian | kmeans++ | kmeans"},
      {"abstraction.epsilon_factor", 0.01, "Sinkhorn epsilon relative to the mean batch cost"},
      {"abstraction.lr", 3e-3, "Adam learning rate"},
      {"abstraction.lr_decay", true, "linear decay of the learning rate to zero"},
      {"abstraction.batch", 128, "minibatch size"},
      {"abstraction.steps", 0, "optimizer steps; 0 uses 200 per thousand samples"},
      {"abstraction.warmup_fraction", 0.8, "leading share of steps trained without quantization"},
      {"abstraction.dead_patience", 200, "steps before an unused codeword is re-seeded"},
      {"dqn.gamma", 0.99, "discount"},
      {"dqn.eps_start", 1.0, "initial exploration rate"},
      {"dqn.eps_end", 0.05, "final exploration rate"},
      {"dqn.eps_decay_steps", 5000, "steps of linear exploration decay"},
      {"dqn.target_sync", 500, "steps between target-network copies"},
      {"dqn.capacity", 10000, "replay capacity"},
      {"dqn.batch", 64, "replay minibatch"},
      {"dqn.lr", 1e-3, "Adam learning rate"},
      {"dqn.hidden", 64, "Q-network hidden width"},
      {"dqn.steps", 20000, "environment steps"},
      {"dqn.learning_starts", 500, "steps before the first update"},
      {"dqn.eval_every", 500, "steps between greedy evaluations"},
      {"dqn.eval_episodes", 20, "episodes per evaluation"},
      {"dqn.eval_seed", 24301, "seed of the shared evaluation episodes"},
      {"dg.method", "fdann", "erm | dann | cdann | fdann"},
      {"dg.latent_dim", 16, "encoder output width"},
      {"dg.hidden", 64, "encoder hidden width"},
      {"dg.disc_hidden", 64, "discriminator hidden width"},
      {"dg.multiplier", 4, "fine codewords per class"},
      {"dg.lambda", 0.1, "transport term weight inside the codeword loss"},
      {"dg.beta", 1.0, "gradient reversal coefficient"},
      {"dg.lr", 1e-3, "Adam learning rate"},
      {"dg.batch", 32, "samples per source domain per step"},
      {"dg.steps", 2000, "optimizer steps"},
      {"dg.epsilon_factor", 0.05, "Sinkhorn epsilon relative to the mean batch cost"},
      {"generator.dim", 10, "input width"},
      {"generator.classes", 2, "classes K"},
      {"generator.modes", 2, "modes per class J"},
      {"generator.source_domains", 3, "source domains; one more is held out as target"},
      {"generator.per_domain", 2000, "samples per domain"},
      {"generator.signal_dims", 2, "coordinates carrying the class layout"},
      {"generator.radius", 5.0, "radius of the mode circle"},
      {"generator.noise_sd", 0.5, "isotropic sample noise"},
      {"generator.shift_scale", 1.0, "sd of per (class, mode, domain) nuisance offsets"},
      {"generator.mode_weight_spread", 0.8, "spread of within-class mode weights across domains"},
      {"generator.seed", 1000, "dataset seed; the cell seed is added to it"},
      {"sweep", Json::object(), "dotted key -> list of values; cells are the cartesian product"},
  };
  return e;
}

Json build_defaults() {
  Json doc = Json::object();
  for (const auto& e : entries()) {
    std::string ptr = "/" + std::string(e.path);
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    doc[Json::json_pointer(ptr)] = e.value;
  }
  return doc;
}

Json::json_pointer pointer(const std::string& path) {
  std::string ptr = "/" + path;
  std::replace(ptr.begin(), ptr.end(), '.', '/');
  return Json::json_pointer(ptr);
}

std::string type_name(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool compatible(const Json& value, const Json& def) {
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_number()) return value.is_number();
  if (def.is_boolean()) return value.is_boolean();
  if (def.is_string()) return value.is_string();
  return value.type() == def.type();
}

std::string unknown_key_message(const std::string& key) {
  std::string msg = "unknown config key '" + key + "'";
  const auto near = nearest_keys(key);
  if (!near.empty()) {
    msg += "; did you mean";
    for (std::size_t i = 0; i < near.size(); ++i) msg += (i ? ", '" : " '") + near[i] + "'";
    msg += "?";
  }
  return msg;
}

const Json& default_at(const std::string& path) {
  const auto ptr = pointer(path);
  if (path == "sweep" || !default_config().contains(ptr) || default_config().at(ptr).is_object()) {
    throw ConfigError(unknown_key_message(path));
  }
  return default_config().at(ptr);
}

Json read_value(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error&) {
    return Json(text);
  }
}

}  // namespace

const Json& default_config() {
  static const Json d = build_defaults();
  return d;
}

const std::vector<KeyDoc>& key_docs() {
  static const std::vector<KeyDoc> docs = [] {
    std::vector<KeyDoc> out;
    for (const auto& e : entries()) out.push_back({e.path, e.doc});
    return out;
  }();
  return docs;
}

std::vector<std::string> leaf_paths() {
  std::vector<std::string> out;
  for (const auto& e : entries()) {
    if (std::string(e.path) != "sweep") out.emplace_back(e.path);
  }
  return out;
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> nearest_keys(const std::string& key, std::size_t limit) {
  std::vector<std::pair<std::size_t, std::string>> scored;
  for (const auto& p : leaf_paths()) {
    // Score against the full path and against its last component.
    const auto leaf = p.substr(p.rfind('.') + 1);
    scored.emplace_back(std::min(levenshtein(key, p), levenshtein(key, leaf) + (p == leaf ? 0 : 1)), p);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  for (const auto& [d, p] : scored) {
    if (out.size() >= limit || d > std::max<std::size_t>(2, key.size() / 4)) break;
    out.push_back(p);
  }
  return out;
}

ExperimentConfig::ExperimentConfig() : doc_(default_config()) {}

ExperimentConfig::ExperimentConfig(Json doc) : doc_(default_config()) {
  if (!doc.is_object()) throw ConfigError("config document must be an object");
  validate_against_defaults(doc, default_config(), "");
  doc_.merge_patch(doc);
  // merge_patch drops keys set to null; restore anything it removed.
  for (const auto& p : leaf_paths()) {
    if (!doc_.contains(pointer(p))) doc_[pointer(p)] = default_config().at(pointer(p));
  }
  if (!doc_.contains("sweep")) doc_["sweep"] = Json::object();
  sweep_axes();
}

void ExperimentConfig::validate_against_defaults(const Json& doc, const Json& defaults, const std::string& prefix) const {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (path == "sweep") continue;
    if (!defaults.contains(it.key())) throw ConfigError(unknown_key_message(path));
    const Json& def = defaults.at(it.key());
    if (def.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + path + "' must be an object");
      validate_against_defaults(it.value(), def, path);
    } else if (!compatible(it.value(), def)) {
      throw ConfigError("config key '" + path + "' expects a " + type_name(def) + ", got " + type_name(it.value()));
    }
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return ExperimentConfig(std::move(doc));
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::serialize() const { return doc_.dump(2); }

void ExperimentConfig::set(const std::string& path, const std::string& value) { set_json(path, read_value(value)); }

void ExperimentConfig::set_json(const std::string& path, const Json& value) {
  if (path.rfind("sweep.", 0) == 0) {
    const std::string axis = path.substr(6);
    default_at(axis);
    if (!value.is_array() || value.empty()) throw ConfigError("sweep axis '" + axis + "' needs a non-empty list");
    doc_["sweep"][axis] = value;
    sweep_axes();
    return;
  }
  const Json& def = default_at(path);
  if (!compatible(value, def)) {
    throw ConfigError("config key '" + path + "' expects a " + type_name(def) + ", got " + type_name(value));
  }
  doc_[pointer(path)] = value;
}

void ExperimentConfig::apply_env(const std::map<std::string, std::string>& env) {
  for (const auto& [name, value] : env) {
    if (name.rfind("ARTIFACT_", 0) != 0) continue;
    const std::string tail = name.substr(9);
    std::string match;
    for (const auto& p : leaf_paths()) {
      std::string upper = p;
      for (auto& c : upper) c = c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (upper == tail) match = p;
    }
    if (match.empty()) {
      std::string lower = tail;
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      throw ConfigError("environment variable " + name + ": " + unknown_key_message(lower));
    }
    set(match, value);
  }
}

const Json& ExperimentConfig::get(const std::string& path) const {
  default_at(path);
  return doc_.at(pointer(path));
}

std::map<std::string, std::vector<Json>> ExperimentConfig::sweep_axes() const {
  std::map<std::string, std::vector<Json>> out;
  const Json& s = doc_.at("sweep");
  if (!s.is_object()) throw ConfigError("'sweep' must be an object of lists");
  for (auto it = s.begin(); it != s.end(); ++it) {
    const Json& def = default_at(it.key());
    if (!it.value().is_array() || it.value().empty()) throw ConfigError("sweep axis '" + it.key() + "' needs a non-empty list");
    for (const auto& v : it.value()) {
      if (!compatible(v, def)) {
        throw ConfigError("sweep axis '" + it.key() + "' expects " + type_name(def) + " values, got " + type_name(v));
      }
      out[it.key()].push_back(v);
    }
  }
  return out;
}

std::vector<ExperimentConfig> ExperimentConfig::expand() const {
  const auto axes = sweep_axes();
  ExperimentConfig base = *this;
  base.doc_["sweep"] = Json::object();
  std::vector<ExperimentConfig> cells{base};
  for (const auto& [path, values] : axes) {
    std::vector<ExperimentConfig> next;
    for (const auto& c : cells) {
      for (const auto& v : values) {
        ExperimentConfig cell = c;
        cell.doc_[pointer(path)] = v;
        next.push_back(std::move(cell));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

gridworld::GridConfig ExperimentConfig::grid() const {
  gridworld::GridConfig g;
  g.size = get("gridworld.size").get<int>();
  g.cell_px = get("gridworld.cell_px").get<int>();
  g.noise_sd = get("gridworld.noise_sd").get<double>();
  g.validate();
  return g;
}

gridworld::EpisodeConfig ExperimentConfig::episode() const {
  gridworld::EpisodeConfig e;
  e.max_steps = get("gridworld.max_steps").get<int>();
  const int row = get("gridworld.goal_row").get<int>();
  const int col = get("gridworld.goal_col").get<int>();
  if ((row < 0) != (col < 0)) throw ConfigError("gridworld.goal_row and gridworld.goal_col must both be set or both be -1");
  e.goal = row < 0 ? dqn::goal_for_seed(grid(), seed()) : gridworld::GridState{row, col};
  const int n = grid().size;
  if (e.goal.row >= n || e.goal.col >= n) throw ConfigError("goal lies outside the grid");
  if (e.max_steps <= 0) throw ConfigError("gridworld.max_steps must be positive");
  return e;
}

abstraction::AbstractionConfig ExperimentConfig::abstraction() const {
  abstraction::AbstractionConfig c;
  c.latent_dim = get("abstraction.latent_dim").get<int>();
  c.encoder_hidden = get("abstraction.encoder_hidden").get<int>();
  c.head_hidden = get("abstraction.head_hidden").get<int>();
  c.latent_activation = parse_activation(get("abstraction.latent_activation").get<std::string>());
  c.codebook_size = get("abstraction.codebook_size").get<int>();
  c.weights = {get("abstraction.alpha").get<double>(), get("abstraction.beta").get<double>(),
               get("abstraction.eta").get<double>(), get("abstraction.lambda").get<double>()};
  c.solver = codebook::parse_solver(get("abstraction.solver").get<std::string>());
  c.init = codebook::parse_init_strategy(get("abstraction.init").get<std::string>());
  c.epsilon_factor = get("abstraction.epsilon_factor").get<double>();
  c.lr = get("abstraction.lr").get<double>();
  c.lr_decay = get("abstraction.lr_decay").get<bool>();
  c.batch = get("abstraction.batch").get<int>();
  c.steps = get("abstraction.steps").get<int>();
  c.warmup_fraction = get("abstraction.warmup_fraction").get<double>();
  c.dead_patience = get("abstraction.dead_patience").get<int>();
  c.seed = seed();
  c.validate();
  return c;
}

dqn::DqnConfig ExperimentConfig::dqn() const {
  dqn::DqnConfig c;
  c.gamma = get("dqn.gamma").get<double>();
  c.eps_start = get("dqn.eps_start").get<double>();
  c.eps_end = get("dqn.eps_end").get<double>();
  c.eps_decay_steps = get("dqn.eps_decay_steps").get<int>();
  c.target_sync = get("dqn.target_sync").get<int>();
  c.capacity = get("dqn.capacity").get<int>();
  c.batch = get("dqn.batch").get<int>();
  c.lr = get("dqn.lr").get<double>();
  c.hidden = get("dqn.hidden").get<int>();
  c.steps = get("dqn.steps").get<int>();
  c.learning_starts = get("dqn.learning_starts").get<int>();
  c.eval_every = get("dqn.eval_every").get<int>();
  c.eval_episodes = get("dqn.eval_episodes").get<int>();
  c.eval_seed = get("dqn.eval_seed").get<std::uint64_t>();
  c.validate();
  return c;
}

dg::DgConfig ExperimentConfig::dg() const {
  dg::DgConfig c;
  c.method = dg::parse_method(get("dg.method").get<std::string>());
  c.latent_dim = get("dg.latent_dim").get<int>();
  c.hidden = get("dg.hidden").get<int>();
  c.disc_hidden = get("dg.disc_hidden").get<int>();
  c.multiplier = get("dg.multiplier").get<int>();
  c.lambda = get("dg.lambda").get<double>();
  c.beta = get("dg.beta").get<double>();
  c.lr = get("dg.lr").get<double>();
  c.batch = get("dg.batch").get<int>();
  c.steps = get("dg.steps").get<int>();
  c.epsilon_factor = get("dg.epsilon_factor").get<double>();
  c.validate();
  return c;
}

dg::GeneratorConfig ExperimentConfig::generator() const {
  dg::GeneratorConfig g;
  g.dim = get("generator.dim").get<int>();
  g.classes = get("generator.classes").get<int>();
  g.modes = get("generator.modes").get<int>();
  g.source_domains = get("generator.source_domains").get<int>();
  g.per_domain = get("generator.per_domain").get<int>();
  g.signal_dims = get("generator.signal_dims").get<int>();
  g.radius = get("generator.radius").get<double>();
  g.noise_sd = get("generator.noise_sd").get<double>();
  g.shift_scale = get("generator.shift_scale").get<double>();
  g.mode_weight_spread = get("generator.mode_weight_spread").get<double>();
  g.validate();
  return g;
}

std::map<std::string, std::string> artifact_env() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq != std::string::npos && kv.rfind("ARTIFACT_", 0) == 0) out[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

}  // namespace tdrl::harness
