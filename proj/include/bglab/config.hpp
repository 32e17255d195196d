#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bglab/chat.hpp"
#include "bglab/models.hpp"
#include "bglab/sandbox.hpp"

namespace bglab {

/// A rejected config value. `key` is the dotted path; `line` is 0 when the
/// value did not come from a file.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, std::size_t line, const std::string& what)
      : std::runtime_error(format(key, line, what)), key_(std::move(key)), line_(line) {}

  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }

 private:
  static std::string format(const std::string& key, std::size_t line, const std::string& what) {
    std::string out = "config";
    if (!key.empty()) out += " key '" + key + "'";
    if (line) out += " (line " + std::to_string(line) + ")";
    return out + ": " + what;
  }

  std::string key_;
  std::size_t line_;
};

struct DataPaths {
  std::string manifest;
  std::string pool;
  std::string train;
  std::string val;
  std::string weights;
  std::string items;
  std::string eval_items;
  std::string suite;
  std::string replay;
  std::string predictions;

  friend bool operator==(const DataPaths&, const DataPaths&) = default;
};

struct PromptOptions {
  std::size_t iterations = 20;
  std::string choice_prefix;
  ChatEndpointConfig engineer = [] {
    ChatEndpointConfig c;
    c.model = "gpt-4.1";
    return c;
  }();
  ChatEndpointConfig solver;

  friend bool operator==(const PromptOptions&, const PromptOptions&) = default;
};

struct RunConfig {
  std::int64_t seed = 0;
  std::string out = "out";
  std::size_t jobs = 1;
  bool render = true;  // write swap pixels, not just manifests
  DataPaths data;
  SandboxConfig sandbox;
  std::size_t per_class = 40;
  double train_fraction = 0.8;
  double tune_fraction = 0.25;
  std::size_t swap_count = 0;  // 0: one swap per mask-bearing item
  Variant variant = Variant::kBaseline;
  BackboneConfig backbone;
  TrainConfig train;
  std::size_t top_k = 10;
  std::string report_format = "json";
  std::string sweep;  // "x=predictions.csv,..."
  PromptOptions prompt;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = static_cast<std::uint64_t>(seed);
    return t;
  }
};

inline nlohmann::ordered_json to_json(const ChatEndpointConfig& c) {
  return {{"base_url", c.base_url},       {"model", c.model},         {"api_key_env", c.api_key_env},
          {"timeout_s", c.timeout_s},     {"max_retries", c.max_retries}, {"temperature", c.temperature},
          {"backoff_s", c.backoff_s}};
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["jobs"] = c.jobs;
  j["render"] = c.render;
  j["data"] = {{"manifest", c.data.manifest}, {"pool", c.data.pool},       {"train", c.data.train},
               {"val", c.data.val},           {"weights", c.data.weights}, {"items", c.data.items},
               {"eval_items", c.data.eval_items}, {"suite", c.data.suite}, {"replay", c.data.replay},
               {"predictions", c.data.predictions}};
  j["sandbox"] = {{"num_classes", c.sandbox.num_classes}, {"frames", c.sandbox.frames},
                  {"size", c.sandbox.size},               {"rho", c.sandbox.rho},
                  {"sprite_size", c.sandbox.sprite_size}, {"pixel_noise", c.sandbox.pixel_noise},
                  {"per_class", c.per_class}};
  j["split"] = {{"train_fraction", c.train_fraction}, {"tune_fraction", c.tune_fraction},
                {"swap_count", c.swap_count}};
  j["model"] = {{"variant", variant_name(c.variant)}, {"stem_width", c.backbone.stem_width},
                {"widths", c.backbone.widths},         {"frames", c.backbone.frames},
                {"size", c.backbone.size},             {"alpha_width", c.backbone.alpha_width}};
  j["train"] = {{"epochs", c.train.epochs},       {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},               {"patience", c.train.patience},
                {"threshold", c.train.threshold}, {"lr_factor", c.train.lr_factor}};
  j["metrics"] = {{"top_k", c.top_k}, {"format", c.report_format}, {"sweep", c.sweep}};
  j["prompt"] = {{"iterations", c.prompt.iterations}, {"choice_prefix", c.prompt.choice_prefix},
                 {"engineer", to_json(c.prompt.engineer)}, {"solver", to_json(c.prompt.solver)}};
  return j;
}

namespace config_detail {

using KeyLines = std::map<std::string, std::size_t>;

/// Line of every object key, by dotted path. Array elements are skipped.
inline KeyLines index_key_lines(const std::string& text) {
  KeyLines lines;
  std::vector<std::string> path;  // one entry per open container; "" for arrays
  std::vector<bool> is_object;
  std::string pending;
  bool have_pending = false;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
    } else if (c == '"') {
      const std::size_t start_line = line;
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        if (text[i] == '\n') ++line;
        s += text[i];
      }
      std::size_t k = i + 1;
      while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
      if (k < text.size() && text[k] == ':' && !is_object.empty() && is_object.back()) {
        std::string full;
        for (const auto& p : path)
          if (!p.empty()) full += p + ".";
        full += s;
        lines.emplace(full, start_line);
        pending = s;
        have_pending = true;
      }
    } else if (c == '{' || c == '[') {
      path.push_back(c == '{' && have_pending ? pending : "");
      is_object.push_back(c == '{');
      have_pending = false;
    } else if (c == '}' || c == ']') {
      if (!path.empty()) path.pop_back();
      if (!is_object.empty()) is_object.pop_back();
    } else if (c == ',') {
      have_pending = false;
    }
  }
  return lines;
}

inline std::size_t line_of(const KeyLines& lines, const std::string& key) {
  const auto it = lines.find(key);
  return it == lines.end() ? 0 : it->second;
}

inline const char* kind(const nlohmann::ordered_json& j) {
  if (j.is_object()) return "an object";
  if (j.is_array()) return "an array";
  if (j.is_string()) return "a string";
  if (j.is_boolean()) return "a boolean";
  if (j.is_number_float()) return "a number";
  if (j.is_number()) return "an integer";
  return "null";
}

/// Checks that `value` can stand in for `like`; integers widen to floats.
inline void check_type(const nlohmann::ordered_json& like, const nlohmann::ordered_json& value, const std::string& key,
                       std::size_t line) {
  const bool ok = (like.is_string() && value.is_string()) || (like.is_boolean() && value.is_boolean()) ||
                  (like.is_number_float() && value.is_number()) ||
                  (like.is_number_integer() && value.is_number_integer()) || (like.is_array() && value.is_array()) ||
                  (like.is_object() && value.is_object());
  if (!ok) throw ConfigError(key, line, std::string("expected ") + kind(like) + ", got " + kind(value));
  if (like.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0)
    throw ConfigError(key, line, "must be non-negative");
  if (like.is_array()) {
    if (like.size() != value.size())
      throw ConfigError(key, line, "expected " + std::to_string(like.size()) + " elements");
    for (std::size_t i = 0; i < like.size(); ++i) check_type(like[i], value[i], key, line);
  }
}

inline void merge(nlohmann::ordered_json& base, const nlohmann::ordered_json& user, const std::string& prefix,
                  const KeyLines& lines) {
  for (const auto& [key, value] : user.items()) {
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(full, line_of(lines, full), "unknown key");
    auto& slot = base[key];
    check_type(slot, value, full, line_of(lines, full));
    if (slot.is_object()) merge(slot, value, full, lines);
    else slot = value;
  }
}

inline void collect_leaves(const nlohmann::ordered_json& j, const std::string& prefix,
                           std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) collect_leaves(value, full, out);
    else out.push_back(full);
  }
}

inline nlohmann::ordered_json* find_path(nlohmann::ordered_json& root, const std::string& dotted) {
  nlohmann::ordered_json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &(*node)[part];
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

inline ChatEndpointConfig endpoint_from_json(const nlohmann::ordered_json& j) {
  ChatEndpointConfig c;
  c.base_url = j.at("base_url").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.api_key_env = j.at("api_key_env").get<std::string>();
  c.timeout_s = j.at("timeout_s").get<double>();
  c.max_retries = j.at("max_retries").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.backoff_s = j.at("backoff_s").get<double>();
  return c;
}

}  // namespace config_detail

/// Builds a config from a fully merged tree (every key present).
inline RunConfig run_config_from_json(const nlohmann::ordered_json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::int64_t>();
  c.out = j.at("out").get<std::string>();
  c.jobs = j.at("jobs").get<std::size_t>();
  c.render = j.at("render").get<bool>();
  const auto& d = j.at("data");
  auto path = [&](const char* key) { return d.at(key).get<std::string>(); };
  c.data = {path("manifest"), path("pool"),       path("train"), path("val"),    path("weights"),
            path("items"),    path("eval_items"), path("suite"), path("replay"), path("predictions")};
  const auto& s = j.at("sandbox");
  c.sandbox.num_classes = s.at("num_classes");
  c.sandbox.frames = s.at("frames");
  c.sandbox.size = s.at("size");
  c.sandbox.rho = s.at("rho");
  c.sandbox.sprite_size = s.at("sprite_size");
  c.sandbox.pixel_noise = s.at("pixel_noise");
  c.per_class = s.at("per_class");
  const auto& sp = j.at("split");
  c.train_fraction = sp.at("train_fraction");
  c.tune_fraction = sp.at("tune_fraction");
  c.swap_count = sp.at("swap_count");
  const auto& m = j.at("model");
  try {
    c.variant = parse_variant(m.at("variant").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model.variant", 0, e.what());
  }
  c.backbone.stem_width = m.at("stem_width");
  c.backbone.widths = m.at("widths").get<std::array<std::size_t, 4>>();
  c.backbone.frames = m.at("frames");
  c.backbone.size = m.at("size");
  c.backbone.alpha_width = m.at("alpha_width");
  const auto& t = j.at("train");
  c.train.epochs = t.at("epochs");
  c.train.batch_size = t.at("batch_size");
  c.train.lr = t.at("lr");
  c.train.patience = t.at("patience");
  c.train.threshold = t.at("threshold");
  c.train.lr_factor = t.at("lr_factor");
  c.top_k = j.at("metrics").at("top_k");
  c.report_format = j.at("metrics").at("format").get<std::string>();
  c.sweep = j.at("metrics").at("sweep").get<std::string>();
  const auto& p = j.at("prompt");
  c.prompt.iterations = p.at("iterations");
  c.prompt.choice_prefix = p.at("choice_prefix").get<std::string>();
  c.prompt.engineer = config_detail::endpoint_from_json(p.at("engineer"));
  c.prompt.solver = config_detail::endpoint_from_json(p.at("solver"));
  return c;
}

/// Throws ConfigError naming the first offending key.
inline void validate(const RunConfig& c, const config_detail::KeyLines& lines = {}) {
  auto fail = [&](const std::string& key, const std::string& what) {
    throw ConfigError(key, config_detail::line_of(lines, key), what);
  };
  if (c.seed < 0) fail("seed", "must be non-negative");
  if (c.out.empty()) fail("out", "must not be empty");
  if (c.jobs == 0) fail("jobs", "must be at least 1");
  try {
    c.sandbox.validate();
  } catch (const std::invalid_argument& e) {
    fail("sandbox", e.what());
  }
  if (c.per_class == 0) fail("sandbox.per_class", "must be at least 1");
  if (!(c.train_fraction > 0 && c.train_fraction < 1)) fail("split.train_fraction", "must be in (0, 1)");
  if (!(c.tune_fraction > 0 && c.tune_fraction < 1)) fail("split.tune_fraction", "must be in (0, 1)");
  try {
    c.backbone.validate();
  } catch (const std::invalid_argument& e) {
    fail("model", e.what());
  }
  if (c.train.epochs == 0) fail("train.epochs", "must be at least 1");
  if (c.train.batch_size == 0) fail("train.batch_size", "must be at least 1");
  if (!(c.train.lr > 0)) fail("train.lr", "must be positive");
  if (!(c.train.threshold >= 0)) fail("train.threshold", "must be non-negative");
  if (!(c.train.lr_factor > 0 && c.train.lr_factor < 1)) fail("train.lr_factor", "must be in (0, 1)");
  if (c.top_k == 0) fail("metrics.top_k", "must be at least 1");
  if (c.report_format != "json" && c.report_format != "csv") fail("metrics.format", "must be json or csv");
  for (const auto& [name, ep] : {std::pair{"engineer", &c.prompt.engineer}, std::pair{"solver", &c.prompt.solver}}) {
    try {
      ep->validate();
    } catch (const std::invalid_argument& e) {
      fail(std::string("prompt.") + name, e.what());
    }
  }
}

/// Parses config text over the defaults. Unknown keys and mistyped values are
/// rejected with the key and its line.
inline RunConfig parse_config(const std::string& text,
                              const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  nlohmann::ordered_json merged = to_json(RunConfig{});
  config_detail::KeyLines lines;
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    nlohmann::ordered_json user;
    try {
      user = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("", 0, e.what());
    }
    if (!user.is_object()) throw ConfigError("", 1, "top level must be an object");
    lines = config_detail::index_key_lines(text);
    config_detail::merge(merged, user, "", lines);
  }

  std::vector<std::string> leaves;
  config_detail::collect_leaves(merged, "", leaves);
  for (const auto& [raw_key, raw_value] : overrides) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '-', '_');
    std::vector<std::string> matches;
    for (const auto& leaf : leaves)
      if (leaf == key || leaf.ends_with("." + key)) matches.push_back(leaf);
    if (std::find(matches.begin(), matches.end(), key) != matches.end()) matches = {key};
    if (matches.empty()) throw ConfigError(raw_key, 0, "unknown option");
    if (matches.size() > 1) {
      std::string list;
      for (const auto& m : matches) list += (list.empty() ? "" : ", ") + m;
      throw ConfigError(raw_key, 0, "ambiguous option; use one of " + list);
    }
    auto* slot = config_detail::find_path(merged, matches[0]);
    nlohmann::ordered_json value;
    if (slot->is_string()) {
      value = raw_value;
    } else {
      value = nlohmann::ordered_json::parse(raw_value, nullptr, false);
      if (value.is_discarded()) throw ConfigError(matches[0], 0, "cannot parse value '" + raw_value + "'");
    }
    config_detail::check_type(*slot, value, matches[0], 0);
    *slot = value;
  }

  RunConfig c = run_config_from_json(merged);
  validate(c, lines);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", 0, "cannot open " + path.string());
  std::ostringstream text;
  text << is.rdbuf();
  return parse_config(text.str(), overrides);
}

}  // namespace bglab
