#include "tmcl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "tmcl/errors.hpp"
#include "tmcl/format.hpp"

namespace tmcl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigurationError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

struct KeyEntry {
  ConfigKey key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename M>
KeyEntry int_key(const char* name, const char* help, M member) {
  return {{name, help},
          [name, member](ExperimentConfig& c, const std::string& v) { c.*member = parse_int(name, v); },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
KeyEntry double_key(const char* name, const char* help, M member) {
  return {{name, help},
          [name, member](ExperimentConfig& c, const std::string& v) { c.*member = parse_double(name, v); },
          [member](const ExperimentConfig& c) { return format_double(c.*member); }};
}

template <typename M>
KeyEntry bool_key(const char* name, const char* help, M member) {
  return {{name, help},
          [name, member](ExperimentConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
          [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

template <typename M>
KeyEntry values_key(const char* name, const char* help, M member) {
  return {{name, help},
          [name, member](ExperimentConfig& c, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(parse_double(name, item));
            c.*member = std::move(out);
          },
          [member](const ExperimentConfig& c) { return join(c.*member); }};
}

const std::vector<KeyEntry>& entries() {
  static const std::vector<KeyEntry> table = [] {
    std::vector<KeyEntry> t;
    t.push_back({{"env", "environment family: pendulum, cartpole_swingup or toymodes"},
                 [](ExperimentConfig& c, const std::string& v) { c.env = env_family_from_string(v); },
                 [](const ExperimentConfig& c) { return to_string(c.env); }});
    t.push_back(values_key("train_values", "training parameter values (empty: family default)",
                           &ExperimentConfig::train_values));
    t.push_back(values_key("test_values", "test parameter values (empty: family default)",
                           &ExperimentConfig::test_values));
    t.push_back(double_key("toy_noise_std", "toymodes transition noise std", &ExperimentConfig::toy_noise_std));
    t.push_back(int_key("heads", "number of prediction heads H", &ExperimentConfig::heads));
    t.push_back(int_key("segment_length", "oracle-loss segment length M", &ExperimentConfig::segment_length));
    t.push_back(int_key("selection_window", "head-selection window N", &ExperimentConfig::selection_window));
    t.push_back(int_key("context_window", "context-encoder window K", &ExperimentConfig::context_window));
    t.push_back(int_key("context_dim", "width of the context vector", &ExperimentConfig::context_dim));
    t.push_back(int_key("ensemble_size", "ensemble members E", &ExperimentConfig::ensemble_size));
    t.push_back(int_key("hidden_width", "backbone hidden width", &ExperimentConfig::hidden_width));
    t.push_back(int_key("hidden_layers", "backbone hidden layers", &ExperimentConfig::hidden_layers));
    t.push_back(int_key("encoder_hidden_width", "context-encoder hidden width",
                        &ExperimentConfig::encoder_hidden_width));
    t.push_back(int_key("encoder_hidden_layers", "context-encoder hidden layers",
                        &ExperimentConfig::encoder_hidden_layers));
    t.push_back(int_key("candidates", "CEM candidates per iteration", &ExperimentConfig::candidates));
    t.push_back(int_key("cem_iterations", "CEM iterations", &ExperimentConfig::cem_iterations));
    t.push_back(int_key("horizon", "planning horizon", &ExperimentConfig::horizon));
    t.push_back(int_key("particles", "particles per candidate", &ExperimentConfig::particles));
    t.push_back(double_key("elite_fraction", "CEM elite fraction", &ExperimentConfig::elite_fraction));
    t.push_back(int_key("iterations", "outer iterations", &ExperimentConfig::iterations));
    t.push_back(int_key("warmup_iterations", "initial iterations trained with the warm-up loss",
                        &ExperimentConfig::warmup_iterations));
    t.push_back(int_key("trajectories_per_iteration", "trajectories collected per iteration",
                        &ExperimentConfig::trajectories_per_iteration));
    t.push_back(int_key("epochs", "training epochs per iteration (-1: family default)",
                        &ExperimentConfig::epochs));
    t.push_back(int_key("batch_size", "segments per mini-batch", &ExperimentConfig::batch_size));
    t.push_back(double_key("learning_rate", "Adam learning rate", &ExperimentConfig::learning_rate));
    t.push_back(double_key("aux_weight", "weight of the auxiliary context losses", &ExperimentConfig::aux_weight));
    t.push_back(int_key("eval_episodes", "test episodes after each iteration", &ExperimentConfig::eval_episodes));
    t.push_back(int_key("eval_interval", "evaluate every this many iterations (and after the last)",
                        &ExperimentConfig::eval_interval));
    t.push_back({{"seeds", "comma-separated master seeds"},
                 [](ExperimentConfig& c, const std::string& v) {
                   std::vector<std::uint64_t> out;
                   for (const auto& item : split_list(v)) out.push_back(parse_u64("seeds", item));
                   c.seeds = std::move(out);
                 },
                 [](const ExperimentConfig& c) { return join(c.seeds); }});
    t.push_back(bool_key("multi_head_no_mcl", "train every head on every segment throughout",
                         &ExperimentConfig::multi_head_no_mcl));
    t.push_back(bool_key("non_adaptive_planning", "plan with the head average instead of the selected head",
                         &ExperimentConfig::non_adaptive_planning));
    t.push_back(bool_key("no_context", "disable the context encoder", &ExperimentConfig::no_context));
    t.push_back({{"output_dir", "directory receiving all outputs"},
                 [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
                 [](const ExperimentConfig& c) { return c.output_dir; }});
    return t;
  }();
  return table;
}

const KeyEntry& entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw ConfigurationError("unknown config key '" + key + "'");
}

}  // namespace

int ExperimentConfig::effective_epochs() const {
  if (epochs >= 0) return epochs;
  return env == EnvFamily::Pendulum ? 5 : 50;
}

std::vector<double> ExperimentConfig::effective_values(Split split) const {
  const auto& v = split == Split::Train ? train_values : test_values;
  return v.empty() ? parameter_set(env, split) : v;
}

void ExperimentConfig::validate() const {
  const auto at_least = [](const char* key, int value, int lo) {
    if (value < lo) {
      throw ConfigurationError("config key '" + std::string(key) + "' must be at least " +
                               std::to_string(lo) + ", got " + std::to_string(value));
    }
  };
  at_least("heads", heads, 1);
  at_least("segment_length", segment_length, 1);
  at_least("selection_window", selection_window, 1);
  at_least("context_window", context_window, 1);
  at_least("context_dim", context_dim, 1);
  at_least("ensemble_size", ensemble_size, 1);
  at_least("hidden_width", hidden_width, 1);
  at_least("hidden_layers", hidden_layers, 1);
  at_least("encoder_hidden_width", encoder_hidden_width, 1);
  at_least("encoder_hidden_layers", encoder_hidden_layers, 1);
  at_least("candidates", candidates, 2);
  at_least("cem_iterations", cem_iterations, 1);
  at_least("horizon", horizon, 1);
  at_least("particles", particles, 1);
  at_least("iterations", iterations, 1);
  at_least("warmup_iterations", warmup_iterations, 0);
  at_least("trajectories_per_iteration", trajectories_per_iteration, 1);
  at_least("epochs", epochs, -1);
  at_least("batch_size", batch_size, 1);
  at_least("eval_episodes", eval_episodes, 0);
  at_least("eval_interval", eval_interval, 1);
  if (warmup_iterations > iterations) {
    throw ConfigurationError("config key 'warmup_iterations' exceeds 'iterations'");
  }
  if (!(elite_fraction > 0.0 && elite_fraction <= 1.0) ||
      static_cast<int>(std::ceil(elite_fraction * candidates - 1e-9)) < 2) {
    throw ConfigurationError("config key 'elite_fraction' must select at least 2 of the candidates");
  }
  if (!(learning_rate > 0.0)) throw ConfigurationError("config key 'learning_rate' must be positive");
  if (aux_weight < 0.0) throw ConfigurationError("config key 'aux_weight' must be non-negative");
  if (toy_noise_std < 0.0) throw ConfigurationError("config key 'toy_noise_std' must be non-negative");
  if (seeds.empty()) throw ConfigurationError("config key 'seeds' must list at least one seed");
  if (multi_head_no_mcl && heads < 2) {
    throw ConfigurationError("multi_head_no_mcl needs heads >= 2");
  }
  if (non_adaptive_planning && heads < 2) {
    throw ConfigurationError("non_adaptive_planning needs heads >= 2");
  }
  if (env == EnvFamily::ToyModes) {
    for (const auto* set : {&train_values, &test_values}) {
      for (double v : *set) {
        if (v != 0.0 && v != 1.0) throw ConfigurationError("toymodes parameter values must be 0 or 1");
      }
    }
  }
  if (output_dir.empty()) throw ConfigurationError("config key 'output_dir' must not be empty");
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "full") return c;
  if (name == "desk" || name == "smoke") {
    c.candidates = 50;
    c.particles = 4;
    c.ensemble_size = 2;
    c.horizon = 15;
    c.hidden_width = 64;
    c.encoder_hidden_width = 64;
    if (name == "desk") return c;
    c.env = EnvFamily::ToyModes;
    c.heads = 2;
    c.hidden_width = 16;
    c.hidden_layers = 2;
    c.encoder_hidden_width = 16;
    c.encoder_hidden_layers = 2;
    c.candidates = 20;
    c.cem_iterations = 2;
    c.horizon = 5;
    c.particles = 2;
    c.iterations = 2;
    c.warmup_iterations = 1;
    c.trajectories_per_iteration = 2;
    c.epochs = 2;
    c.batch_size = 16;
    c.eval_episodes = 1;
    c.seeds = {0};
    c.output_dir = "runs/smoke";
    return c;
  }
  throw ConfigurationError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"full", "desk", "smoke"}; }

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  entry(key).set(config, trim(value));
}

std::string get_config_value(const ExperimentConfig& config, const std::string& key) {
  if (key == "preset") return config.preset;
  return entry(key).get(config);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigurationError("config line " + std::to_string(number) + ": expected key=value");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigurationError("config line " + std::to_string(number) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ExperimentConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& file_values,
                                const std::vector<std::pair<std::string, std::string>>& cli_values) {
  std::string preset = "full";
  for (const auto* source : {&file_values, &cli_values}) {
    for (const auto& [k, v] : *source) {
      if (k == "preset") preset = v;
    }
  }
  ExperimentConfig c = preset_config(preset);
  for (const auto* source : {&file_values, &cli_values}) {
    for (const auto& [k, v] : *source) {
      if (k != "preset") set_config_value(c, k, v);
    }
  }
  c.validate();
  return c;
}

std::string to_config_text(const ExperimentConfig& config) {
  std::string out = "preset=" + config.preset + "\n";
  for (const auto& e : entries()) out += e.key.name + "=" + e.get(config) + "\n";
  return out;
}

nlohmann::json to_json(const ExperimentConfig& config) {
  nlohmann::json j;
  j["preset"] = config.preset;
  j["env"] = to_string(config.env);
  j["train_values"] = config.effective_values(Split::Train);
  j["test_values"] = config.effective_values(Split::Test);
  j["toy_noise_std"] = config.toy_noise_std;
  j["heads"] = config.heads;
  j["segment_length"] = config.segment_length;
  j["selection_window"] = config.selection_window;
  j["context_window"] = config.context_window;
  j["context_dim"] = config.context_dim;
  j["ensemble_size"] = config.ensemble_size;
  j["hidden_width"] = config.hidden_width;
  j["hidden_layers"] = config.hidden_layers;
  j["encoder_hidden_width"] = config.encoder_hidden_width;
  j["encoder_hidden_layers"] = config.encoder_hidden_layers;
  j["candidates"] = config.candidates;
  j["cem_iterations"] = config.cem_iterations;
  j["horizon"] = config.horizon;
  j["particles"] = config.particles;
  j["elite_fraction"] = config.elite_fraction;
  j["iterations"] = config.iterations;
  j["warmup_iterations"] = config.warmup_iterations;
  j["trajectories_per_iteration"] = config.trajectories_per_iteration;
  j["epochs"] = config.effective_epochs();
  j["batch_size"] = config.batch_size;
  j["learning_rate"] = config.learning_rate;
  j["aux_weight"] = config.aux_weight;
  j["eval_episodes"] = config.eval_episodes;
  j["eval_interval"] = config.eval_interval;
  j["seeds"] = config.seeds;
  j["multi_head_no_mcl"] = config.multi_head_no_mcl;
  j["non_adaptive_planning"] = config.non_adaptive_planning;
  j["no_context"] = config.no_context;
  j["output_dir"] = config.output_dir;
  return j;
}

}  // namespace tmcl
