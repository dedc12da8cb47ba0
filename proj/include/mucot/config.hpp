#pragma once

// Run configuration for the command-line tool: flat "key = value" files with
// '#' comments, plus "key=value" overrides applied afterwards.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mucot/error.hpp"
#include "mucot/trainer.hpp"

namespace mucot {

struct RunConfig {
  std::filesystem::path train_file;
  std::filesystem::path validation_file;
  std::filesystem::path vocab_file;       // empty: build from the training data
  std::filesystem::path init_checkpoint;  // empty: seeded random init
  std::filesystem::path out_dir;
  std::size_t vocab_size = 8192;
  TrainSettings settings;

  // Checks ranges and that every referenced input exists.
  void validate() const;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline std::size_t to_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    fail(ErrorCode::invalid_config, key, ": expected a non-negative integer, got '", value, "'");
  }
  return out;
}

inline double to_real(const std::string& key, const std::string& value) {
  double out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    fail(ErrorCode::invalid_config, key, ": expected a number, got '", value, "'");
  }
  return out;
}

inline bool to_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(ErrorCode::invalid_config, key, ": expected true or false, got '", value, "'");
}

inline std::string show(double v) { return nlohmann::json(v).dump(); }

}  // namespace config_detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  auto path_key = [](std::string name, std::string help, std::filesystem::path RunConfig::*member) {
    return ConfigKey{std::move(name), std::move(help), [member](RunConfig& c, const std::string& v) { c.*member = v; },
                     [member](const RunConfig& c) { return (c.*member).string(); }};
  };
  auto count_key = [](std::string name, std::string help, auto get_ref) {
    const std::string key = name;
    return ConfigKey{std::move(name), std::move(help),
                     [get_ref, key](RunConfig& c, const std::string& v) { get_ref(c) = to_count(key, v); },
                     [get_ref](const RunConfig& c) { return std::to_string(get_ref(c)); }};
  };
  auto real_key = [](std::string name, std::string help, auto get_ref) {
    const std::string key = name;
    return ConfigKey{std::move(name), std::move(help),
                     [get_ref, key](RunConfig& c, const std::string& v) { get_ref(c) = to_real(key, v); },
                     [get_ref](const RunConfig& c) { return show(get_ref(c)); }};
  };
  static const std::vector<ConfigKey> keys = {
      path_key("train_file", "training records (.jsonl or .csv); variants use ids of the form <id>::<lang>",
               &RunConfig::train_file),
      path_key("validation_file", "validation records scored every eval_interval steps (optional)",
               &RunConfig::validation_file),
      path_key("vocab_file", "vocabulary, one piece per line (optional; built from train_file when empty)",
               &RunConfig::vocab_file),
      path_key("init_checkpoint", "checkpoint manifest to start from (optional; random init when empty)",
               &RunConfig::init_checkpoint),
      path_key("out_dir", "directory for checkpoints, logs and the vocabulary", &RunConfig::out_dir),
      count_key("vocab_size", "target vocabulary size when building one",
                [](auto& c) -> auto& { return c.vocab_size; }),
      count_key("d_model", "hidden width", [](auto& c) -> auto& { return c.settings.encoder.d_model; }),
      count_key("n_layers", "encoder blocks", [](auto& c) -> auto& { return c.settings.encoder.n_layers; }),
      count_key("n_heads", "attention heads", [](auto& c) -> auto& { return c.settings.encoder.n_heads; }),
      count_key("d_ffn", "feed-forward width", [](auto& c) -> auto& { return c.settings.encoder.d_ffn; }),
      count_key("max_positions", "position embedding rows",
                [](auto& c) -> auto& { return c.settings.encoder.max_positions; }),
      count_key("max_length", "tokens per feature", [](auto& c) -> auto& { return c.settings.features.max_length; }),
      count_key("doc_stride", "context tokens shared by consecutive windows",
                [](auto& c) -> auto& { return c.settings.features.doc_stride; }),
      ConfigKey{"keep_unanswerable", "train on windows without the answer (labelled [CLS])",
                [](RunConfig& c, const std::string& v) { c.settings.features.keep_unanswerable = to_flag("keep_unanswerable", v); },
                [](const RunConfig& c) { return std::string(c.settings.features.keep_unanswerable ? "true" : "false"); }},
      count_key("n_best", "start/end candidates considered when decoding",
                [](auto& c) -> auto& { return c.settings.decode.n_best; }),
      count_key("max_answer_tokens", "longest decoded answer in tokens",
                [](auto& c) -> auto& { return c.settings.decode.max_answer_tokens; }),
      count_key("batch_size", "features per step", [](auto& c) -> auto& { return c.settings.train.batch_size; }),
      count_key("max_steps", "optimizer steps", [](auto& c) -> auto& { return c.settings.train.max_steps; }),
      real_key("learning_rate", "AdamW step size", [](auto& c) -> auto& { return c.settings.train.learning_rate; }),
      real_key("weight_decay", "decoupled weight decay on weight matrices",
               [](auto& c) -> auto& { return c.settings.train.weight_decay; }),
      real_key("w_contrastive", "weight of the contrastive term (0 disables it)",
               [](auto& c) -> auto& { return c.settings.train.w_contrastive; }),
      count_key("contrastive_interval", "apply the contrastive term every this many steps",
                [](auto& c) -> auto& { return c.settings.train.contrastive_interval; }),
      count_key("max_contrastive_steps", "no contrastive term after this step",
                [](auto& c) -> auto& { return c.settings.train.max_contrastive_steps; }),
      count_key("tap_layer", "encoder block (1-based) whose output is pooled for the contrastive term",
                [](auto& c) -> auto& { return c.settings.train.tap_layer; }),
      count_key("eval_interval", "validation and checkpoint interval in steps",
                [](auto& c) -> auto& { return c.settings.train.eval_interval; }),
      count_key("seed", "seed for init, batching and pair sampling",
                [](auto& c) -> auto& { return c.settings.train.seed; }),
      real_key("grad_clip", "global gradient norm limit (0 disables clipping)",
               [](auto& c) -> auto& { return c.settings.train.grad_clip; }),
  };
  return keys;
}

inline const ConfigKey& find_config_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return k;
  }
  fail(ErrorCode::invalid_config, "unknown config key '", name, "'");
}

// One "key = value" per line; blank lines and '#' comments are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                         const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (config_detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    const auto key = eq == std::string_view::npos ? std::string() : config_detail::trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorCode::parse_failure, source, ":", line_no, ": expected 'key = value'");
    out.emplace_back(key, config_detail::trim(line.substr(eq + 1)));
  }
  return out;
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_config_key(key).set(cfg, value);
}

// "key=value" as given on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorCode::usage, "override '", assignment, "' is not key=value");
  apply_setting(cfg, config_detail::trim(assignment.substr(0, eq)), config_detail::trim(assignment.substr(eq + 1)));
}

// Relative paths in a config file resolve against the file's directory.
inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_failure, "cannot read config ", path.string());
    std::ostringstream text;
    text << in.rdbuf();
    const auto base = path.parent_path();
    for (const auto& [key, value] : parse_key_values(text.str(), path.string())) {
      const auto& k = find_config_key(key);
      std::string v = value;
      if (k.name.ends_with("_file") || k.name.ends_with("_dir") || k.name.ends_with("_checkpoint")) {
        if (!v.empty() && std::filesystem::path(v).is_relative()) v = (base / v).lexically_normal().string();
      }
      k.set(cfg, v);
    }
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

inline std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

inline std::string config_help() {
  std::string out = "Config keys (file lines 'key = value', '#' starts a comment; --set key=value overrides):\n";
  const RunConfig defaults;
  for (const auto& k : config_keys()) {
    out += "  " + k.name;
    out += std::string(k.name.size() < 24 ? 24 - k.name.size() : 1, ' ');
    out += k.help;
    const auto d = k.get(defaults);
    if (!d.empty()) out += " [" + d + "]";
    out += "\n";
  }
  return out;
}

inline void RunConfig::validate() const {
  auto must_exist = [](const std::filesystem::path& p, const char* key) {
    if (!p.empty() && !std::filesystem::exists(p)) fail(ErrorCode::io_failure, key, ": ", p.string(), " does not exist");
  };
  if (train_file.empty()) fail(ErrorCode::invalid_config, "train_file is required");
  if (out_dir.empty()) fail(ErrorCode::invalid_config, "out_dir is required");
  must_exist(train_file, "train_file");
  must_exist(validation_file, "validation_file");
  must_exist(vocab_file, "vocab_file");
  must_exist(init_checkpoint, "init_checkpoint");
  if (vocab_size < 4) fail(ErrorCode::invalid_config, "vocab_size must be >= 4");
  settings.train.validate();
  settings.features.validate();
  settings.decode.validate();
  auto enc = settings.encoder;
  enc.tap_layer = settings.train.tap_layer;
  enc.vocab_size = std::max<std::size_t>(enc.vocab_size, 4);
  enc.validate();
  if (enc.max_positions < settings.features.max_length) {
    fail(ErrorCode::invalid_config, "max_positions ", enc.max_positions, " is below max_length ", settings.features.max_length);
  }
}

}  // namespace mucot
