#include "lktcn/run_config.hpp"

#include <fstream>
#include <istream>
#include <sstream>

#include "lktcn/errors.hpp"
#include "lktcn/parse.hpp"

namespace lktcn {

namespace {

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::vector<std::pair<std::string, std::string>> train_kv(const TrainConfig& t) {
  return {{"lr", format_double(t.lr)},
          {"batch_size", std::to_string(t.batch_size)},
          {"max_epochs", std::to_string(t.max_epochs)},
          {"patience", std::to_string(t.patience)},
          {"seed", std::to_string(t.seed)},
          {"weight_decay", format_double(t.weight_decay)},
          {"dtype", dtype_name(t.dtype)},
          {"max_steps_per_epoch", std::to_string(t.max_steps_per_epoch)}};
}

bool set_train(TrainConfig& t, const std::string& key, const std::string& value) {
  if (key == "lr") t.lr = parse_double(key, value);
  else if (key == "batch_size") t.batch_size = parse_size(key, value);
  else if (key == "max_epochs") t.max_epochs = parse_size(key, value);
  else if (key == "patience") t.patience = parse_size(key, value);
  else if (key == "seed") t.seed = parse_u64(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "dtype") t.dtype = parse_dtype(value);
  else if (key == "max_steps_per_epoch") t.max_steps_per_epoch = parse_size(key, value);
  else return false;
  return true;
}

SplitSpec parse_ratios(const std::string& text, bool overlap) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw std::invalid_argument("split_ratios must be 'auto' or three comma-separated ratios");
  SplitSpec s{parse_double("split_ratios", std::string(trim(parts[0]))),
              parse_double("split_ratios", std::string(trim(parts[1]))),
              parse_double("split_ratios", std::string(trim(parts[2]))), overlap};
  s.validate();
  return s;
}

}  // namespace

bool RunConfig::set(const std::string& key, const std::string& value) {
  try {
    if (model.set(key, value) || set_train(train, key, value)) return true;
    if (key == "data") {
      data = value;
    } else if (key == "split_ratios") {
      if (value != "auto") parse_ratios(value, lookback_overlap);
      split_ratios = value;
    } else if (key == "lookback_overlap") {
      lookback_overlap = parse_bool(key, value);
    } else {
      return false;
    }
    return true;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : ModelConfig{}.to_kv()) out.push_back(k);
  for (const auto& [k, v] : train_kv(TrainConfig{})) out.push_back(k);
  out.insert(out.end(), {"data", "split_ratios", "lookback_overlap"});
  return out;
}

void RunConfig::apply(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string_view body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + "missing key");
    try {
      if (!set(key, value)) throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig c;
  c.apply(in, source);
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

std::string RunConfig::snapshot() const {
  std::ostringstream out;
  out << "# model\n";
  for (const auto& [k, v] : model.to_kv()) out << k << " = " << v << '\n';
  out << "# training\n";
  for (const auto& [k, v] : train_kv(train)) out << k << " = " << v << '\n';
  out << "# data\n";
  out << "data = " << data << '\n';
  out << "split_ratios = " << split_ratios << '\n';
  out << "lookback_overlap = " << (lookback_overlap ? "true" : "false") << '\n';
  return out.str();
}

SplitSpec RunConfig::split_spec() const {
  if (split_ratios == "auto") {
    SplitSpec s = SplitSpec::for_dataset(data);
    s.lookback_overlap = lookback_overlap;
    return s;
  }
  try {
    return parse_ratios(split_ratios, lookback_overlap);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
    split_spec();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace lktcn
