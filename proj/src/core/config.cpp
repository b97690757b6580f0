#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace pskn {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t from = 0;
  while (true) {
    const std::size_t at = s.find(sep, from);
    if (at == std::string::npos) {
      parts.push_back(s.substr(from));
      return parts;
    }
    parts.push_back(s.substr(from, at - from));
    from = at + 1;
  }
}

std::size_t parse_size(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  const bool digits =
      !value.empty() && std::all_of(value.begin(), value.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c));
      });
  if (!digits)
    throw ConfigError(key + ": expected a non-negative integer, got '" +
                      value + "'");
  try {
    return static_cast<std::size_t>(std::stoull(value));
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range: '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& raw) {
  std::vector<std::size_t> out;
  if (trim(raw).empty()) return out;
  for (const std::string& part : split(raw, ','))
    out.push_back(parse_size(key, part));
  return out;
}

std::vector<StageConfig> parse_stages(const std::string& raw) {
  std::vector<StageConfig> stages;
  for (const std::string& record : split(raw, ';')) {
    const std::vector<std::string> fields = split(record, ':');
    if (fields.size() != 5)
      throw ConfigError(
          "stages: each record needs "
          "n_out:radius:group_size:widths:reduce_width, got '" +
          record + "'");
    StageConfig stage;
    stage.n_out = parse_size("stages.n_out", fields[0]);
    stage.radius = parse_double("stages.radius", fields[1]);
    stage.group_size = parse_size("stages.group_size", fields[2]);
    stage.mlp_widths = parse_size_list("stages.widths", fields[3]);
    stage.reduce_width = parse_size("stages.reduce_width", fields[4]);
    stages.push_back(std::move(stage));
  }
  return stages;
}

// Shortest decimal form that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

std::string fmt_size_list(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

bool apply_model_key(const std::string& key, const std::string& value,
                     ModelConfig& cfg) {
  try {
    if (key == "stages") {
      cfg.stages = parse_stages(value);
    } else if (key == "global_mlp") {
      cfg.global_mlp_widths = parse_size_list(key, value);
    } else if (key == "fc") {
      cfg.fc_widths = parse_size_list(key, value);
    } else if (key == "n_classes") {
      cfg.n_classes = parse_size(key, value);
    } else if (key == "in_feature_width") {
      cfg.in_feature_width = parse_size(key, value);
    } else if (key == "skip_mode") {
      cfg.skip_mode = parse_skip_mode(trim(value));
    } else if (key == "dropout_rate") {
      cfg.dropout_rate = parse_double(key, value);
    } else {
      return false;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
  return true;
}

bool apply_train_key(const std::string& key, const std::string& value,
                     TrainConfig& cfg) {
  try {
    if (key == "batch_size") {
      cfg.batch_size = parse_size(key, value);
    } else if (key == "epochs") {
      cfg.epochs = parse_size(key, value);
    } else if (key == "learning_rate") {
      cfg.learning_rate = parse_double(key, value);
    } else if (key == "beta1") {
      cfg.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
      cfg.beta2 = parse_double(key, value);
    } else if (key == "epsilon") {
      cfg.epsilon = parse_double(key, value);
    } else if (key == "seed") {
      cfg.seed = parse_size(key, value);
    } else if (key == "cosine_decay") {
      cfg.cosine_decay = parse_bool(key, value);
    } else if (key == "min_learning_rate") {
      cfg.min_learning_rate = parse_double(key, value);
    } else if (key == "n_points") {
      cfg.n_points = parse_size(key, value);
    } else if (key == "augment") {
      cfg.augment.mode = parse_augment_mode(trim(value));
    } else if (key == "cache_dir") {
      cfg.cache_dir = trim(value);
    } else {
      return false;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
  return true;
}

// Walks key=value lines, dispatching each to the given appliers.
template <typename Apply>
void apply_lines(const std::string& text, Apply&& apply) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        " has an empty key");
    if (!apply(key, value))
      throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace

std::string model_config_text(const ModelConfig& cfg) {
  std::string out = "stages=";
  for (std::size_t j = 0; j < cfg.stages.size(); ++j) {
    const StageConfig& s = cfg.stages[j];
    if (j) out += ';';
    out += std::to_string(s.n_out) + ':' + fmt_double(s.radius) + ':' +
           std::to_string(s.group_size) + ':' + fmt_size_list(s.mlp_widths) +
           ':' + std::to_string(s.reduce_width);
  }
  out += "\nglobal_mlp=" + fmt_size_list(cfg.global_mlp_widths);
  out += "\nfc=" + fmt_size_list(cfg.fc_widths);
  out += "\nn_classes=" + std::to_string(cfg.n_classes);
  out += "\nin_feature_width=" + std::to_string(cfg.in_feature_width);
  out += "\nskip_mode=" + skip_mode_name(cfg.skip_mode);
  out += "\ndropout_rate=" + fmt_double(cfg.dropout_rate);
  out += '\n';
  return out;
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig cfg;
  apply_lines(text, [&cfg](const std::string& key, const std::string& value) {
    return apply_model_key(key, value, cfg);
  });
  cfg.validate();
  return cfg;
}

void apply_config_text(const std::string& text, ModelConfig& model,
                       TrainConfig& train) {
  apply_lines(text, [&](const std::string& key, const std::string& value) {
    return apply_model_key(key, value, model) ||
           apply_train_key(key, value, train);
  });
}

void load_config_file(const std::string& path, ModelConfig& model,
                      TrainConfig& train) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  apply_config_text(buffer.str(), model, train);
}

}  // namespace pskn
