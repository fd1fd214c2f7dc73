#include "cvcrf/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace cvcrf {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config: " + key + " expects a nonnegative integer, got '" + v + "'");
  }
  return std::stoull(v);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

std::string fmt_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + fmt_double(values[i]);
  return out;
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config: " + key + " expects a comma-separated list");
  return out;
}

struct Entry {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define CVCRF_DOUBLE(name, field)                                                          \
  Entry {                                                                                  \
    name, [](TrainConfig& c, const std::string& v) { c.field = to_double(name, v); },      \
        [](const TrainConfig& c) { return fmt_double(c.field); }                           \
  }
#define CVCRF_UINT(name, field)                                                            \
  Entry {                                                                                  \
    name, [](TrainConfig& c, const std::string& v) { c.field = to_uint(name, v); },        \
        [](const TrainConfig& c) { return std::to_string(c.field); }                       \
  }
#define CVCRF_BOOL(name, field)                                                            \
  Entry {                                                                                  \
    name, [](TrainConfig& c, const std::string& v) { c.field = to_bool(name, v); },        \
        [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); }       \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"preset", [](TrainConfig&, const std::string&) {}, [](const TrainConfig& c) { return c.preset; }},
      CVCRF_UINT("seed", seed),
      CVCRF_UINT("epochs", epochs),
      CVCRF_UINT("batch_size", batch_size),
      CVCRF_DOUBLE("lr", lr),
      CVCRF_DOUBLE("weight_decay", weight_decay),
      CVCRF_DOUBLE("alpha", alpha),
      CVCRF_DOUBLE("tau", tau),
      CVCRF_DOUBLE("lambda", lambda),
      CVCRF_BOOL("no_cmcl", no_cmcl),
      CVCRF_BOOL("no_dsam", no_dsam),
      CVCRF_BOOL("no_moe", no_moe),
      Entry{"view", [](TrainConfig& c, const std::string& v) { c.view = parse_view_mode(v); },
            [](const TrainConfig& c) { return view_mode_name(c.view); }},
      CVCRF_BOOL("gate_stop_gradient", gate_stop_gradient),
      CVCRF_BOOL("shared_backbone", shared_backbone),
      Entry{"select_metric",
            [](TrainConfig& c, const std::string& v) {
              if (v != "m_f1" && v != "acc") throw ConfigError("config: select_metric must be m_f1 or acc");
              c.select_metric = v;
            },
            [](const TrainConfig& c) { return c.select_metric; }},
      CVCRF_UINT("data.n", data.n),
      CVCRF_UINT("data.num_classes", data.num_classes),
      CVCRF_UINT("data.image_size", data.image_size),
      CVCRF_UINT("data.in_channels", data.in_channels),
      Entry{"data.class_weights", [](TrainConfig& c, const std::string& v) { c.data.class_weights = to_list("data.class_weights", v); },
            [](const TrainConfig& c) { return fmt_list(c.data.class_weights); }},
      CVCRF_DOUBLE("data.class_gap", data.class_gap),
      CVCRF_DOUBLE("data.severity_jitter", data.severity_jitter),
      CVCRF_DOUBLE("data.view_noise", data.view_noise),
      CVCRF_DOUBLE("data.pixel_noise", data.pixel_noise),
      CVCRF_DOUBLE("data.spacing_min", data.spacing_min),
      CVCRF_DOUBLE("data.spacing_max", data.spacing_max),
      CVCRF_DOUBLE("split.train", split.train),
      CVCRF_DOUBLE("split.val", split.val),
      CVCRF_DOUBLE("split.test", split.test),
      CVCRF_UINT("model.base_channels", base_channels),
      CVCRF_UINT("model.proj_dim", proj_dim),
      CVCRF_UINT("model.patches", patches),
      CVCRF_UINT("model.heads", heads),
  };
  return table;
}

#undef CVCRF_DOUBLE
#undef CVCRF_UINT
#undef CVCRF_BOOL

}  // namespace

std::string view_mode_name(ViewMode mode) {
  switch (mode) {
    case ViewMode::LongOnly:
      return "long";
    case ViewMode::TransOnly:
      return "trans";
    case ViewMode::Both:
      break;
  }
  return "both";
}

ViewMode parse_view_mode(const std::string& name) {
  if (name == "both" || name == "off") return ViewMode::Both;
  if (name == "long") return ViewMode::LongOnly;
  if (name == "trans") return ViewMode::TransOnly;
  throw ConfigError("config: view must be both, long or trans; got '" + name + "'");
}

TrainConfig TrainConfig::full_preset() {
  TrainConfig c;
  c.preset = "full";
  c.epochs = 100;
  c.lr = 1e-4;
  c.data.n = 1657;
  c.data.image_size = 224;
  return c;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("config: lambda must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("config: tau must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("config: alpha must lie in [0, 1]");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (!no_dsam && data.image_size % 32 != 0) throw ConfigError("config: the attention cascade needs data.image_size divisible by 32");
  if (!(split.train > 0.0 && split.val > 0.0 && split.test > 0.0)) throw ConfigError("config: split ratios must be > 0");
  try {
    data.validate();
    model_config().backbone.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.backbone.input_channels = data.in_channels + 1;
  m.backbone.image_size = data.image_size;
  m.backbone.base_channels = base_channels;
  m.backbone.proj_dim = proj_dim;
  m.backbone.patches = patches;
  m.heads = heads;
  m.num_classes = data.num_classes;
  m.shared_backbone = shared_backbone;
  m.use_dsam = !no_dsam;
  m.use_moe = !no_moe;
  m.gate_stop_gradient = gate_stop_gradient;
  m.view = view;
  return m;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

TrainConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::string preset = "desk";
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value != "desk" && value != "full") throw ConfigError("config: unknown preset '" + value + "'");
      preset = value;
    }
    pairs.emplace_back(key, value);
  }
  TrainConfig config = preset == "full" ? TrainConfig::full_preset() : TrainConfig::desk_preset();
  for (const auto& [key, value] : pairs) {
    const auto& table = entries();
    auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return e.key == key; });
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->set(config, value);
  }
  config.validate();
  return config;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace cvcrf
