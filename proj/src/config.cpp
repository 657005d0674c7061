#include "pseudolabel/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "pseudolabel/error.hpp"

namespace pseudolabel {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: bad value '" + text + "' for key '" + key + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "on" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "off" || text == "0" || text == "no") return false;
  throw ConfigError("config: bad boolean '" + text + "' for key '" + key + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
  }
  return out;
}

template <typename T>
std::string to_text(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string list_text(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + to_text(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_number<T>(k, v); },
          [member](const RunConfig& c) { return to_text(c.*member); }};
}

Field bool_field(bool RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

template <typename T>
Field selection_field(T SelectionConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            c.selection.*member = parse_number<T>(k, v);
          },
          [member](const RunConfig& c) { return to_text(c.selection.*member); }};
}

// Optimizer hyperparameters shared by all three schedules.
template <typename T>
Field shared_optimizer_field(T OptimizerConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            const T parsed = parse_number<T>(k, v);
            c.pretrain.*member = parsed;
            c.first.*member = parsed;
            c.later.*member = parsed;
          },
          [member](const RunConfig& c) { return to_text(c.pretrain.*member); }};
}

Field epochs_field(OptimizerConfig RunConfig::*schedule) {
  return {[schedule](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*schedule).epochs = parse_number<std::size_t>(k, v);
          },
          [schedule](const RunConfig& c) { return to_text((c.*schedule).epochs); }};
}

Field milestones_field(OptimizerConfig RunConfig::*schedule) {
  return {[schedule](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*schedule).milestones = parse_list<std::size_t>(k, v);
          },
          [schedule](const RunConfig& c) { return list_text((c.*schedule).milestones); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"models", number_field(&RunConfig::models)},
      {"passes", number_field(&RunConfig::passes)},
      {"repetitions", number_field(&RunConfig::repetitions)},
      {"label_fraction", number_field(&RunConfig::label_fraction)},
      {"per_class_minimum", number_field(&RunConfig::per_class_minimum)},
      {"test_fraction", number_field(&RunConfig::test_fraction)},
      {"gamma", selection_field(&SelectionConfig::gamma)},
      {"tau_p", selection_field(&SelectionConfig::tau_p)},
      {"tau_n", selection_field(&SelectionConfig::tau_n)},
      {"kappa_p", selection_field(&SelectionConfig::kappa_p)},
      {"kappa_n", selection_field(&SelectionConfig::kappa_n)},
      {"negative_learning",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.selection.negative_learning = parse_bool(k, v);
        },
        [](const RunConfig& c) { return std::string(c.selection.negative_learning ? "true" : "false"); }}},
      {"selection_mode",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "confidence_only") {
            c.selection.mode = SelectionMode::confidence_only;
          } else if (v == "uncertainty_gated") {
            c.selection.mode = SelectionMode::uncertainty_gated;
          } else {
            throw ConfigError("config: bad value '" + v + "' for key '" + k + "'");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.selection.mode == SelectionMode::confidence_only ? "confidence_only"
                                                                                : "uncertainty_gated");
        }}},
      {"strategy",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "voting") {
            c.strategy = SelectionStrategy::voting;
          } else if (v == "gated") {
            c.strategy = SelectionStrategy::gated;
          } else {
            throw ConfigError("config: bad value '" + v + "' for key '" + k + "'");
          }
        },
        [](const RunConfig& c) { return std::string(c.strategy == SelectionStrategy::voting ? "voting" : "gated"); }}},
      {"selection_enabled", bool_field(&RunConfig::selection_enabled)},
      {"mc_dropout", bool_field(&RunConfig::mc_dropout)},
      {"warm_start", bool_field(&RunConfig::warm_start)},
      {"reinit_head", bool_field(&RunConfig::reinit_head)},
      {"hidden1", number_field(&RunConfig::hidden1)},
      {"hidden2", number_field(&RunConfig::hidden2)},
      {"dropout", number_field(&RunConfig::dropout_rate)},
      {"lr", shared_optimizer_field(&OptimizerConfig::lr)},
      {"momentum", shared_optimizer_field(&OptimizerConfig::momentum)},
      {"weight_decay", shared_optimizer_field(&OptimizerConfig::weight_decay)},
      {"batch_size", shared_optimizer_field(&OptimizerConfig::batch_size)},
      {"lr_gamma", shared_optimizer_field(&OptimizerConfig::gamma)},
      {"pretrain_epochs", epochs_field(&RunConfig::pretrain)},
      {"pretrain_milestones", milestones_field(&RunConfig::pretrain)},
      {"first_epochs", epochs_field(&RunConfig::first)},
      {"first_milestones", milestones_field(&RunConfig::first)},
      {"later_epochs", epochs_field(&RunConfig::later)},
      {"later_milestones", milestones_field(&RunConfig::later)},
      {"probe_gammas",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.probe_gammas = parse_list<float>(k, v); },
        [](const RunConfig& c) { return list_text(c.probe_gammas); }}},
      {"ece_bins", number_field(&RunConfig::ece_bins)},
      {"seed", number_field(&RunConfig::seed)},
      {"threads", number_field(&RunConfig::threads)},
  };
  return table;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(config, key, value);
}

void apply_config_text(RunConfig& config, const std::string& text) {
  for (const auto& [key, value] : parse_key_values(text)) apply_setting(config, key, value);
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  const auto raw = detail::read_file(path);
  apply_config_text(config, std::string(raw.begin(), raw.end()));
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return keys;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace pseudolabel
