#include "hot/config.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

namespace hot {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || v.front() == '-')
    throw ConfigError("config: '" + key + "' needs a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(x))
    throw ConfigError("config: '" + key + "' needs a number, got '" + v + "'");
  return x;
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key or value");
    if (!seen.insert(key).second) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_key_values(in, path);
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (window == 0) throw ConfigError("config: window must be positive");
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (!(adam.lr >= 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0))
    throw ConfigError("config: invalid Adam settings");
  if (thresholds.negative > thresholds.positive) throw ConfigError("config: negative threshold above positive");
  if (split.train <= 0.0 || split.val < 0.0 || split.train + split.val > 1.0)
    throw ConfigError("config: split ratios must satisfy 0 < train, 0 <= val, train + val <= 1");
}

void set_key(RunConfig& c, const std::string& key, const std::string& v) {
  try {
    if (set_model_key(c.model, key, v)) return;
  } catch (const std::exception& e) {
    throw ConfigError("config: bad value for '" + key + "': " + e.what());
  }
  if (key == "lr") c.adam.lr = to_real(key, v);
  else if (key == "beta1") c.adam.beta1 = to_real(key, v);
  else if (key == "beta2") c.adam.beta2 = to_real(key, v);
  else if (key == "adam_eps") c.adam.eps = to_real(key, v);
  else if (key == "weight_decay") c.adam.weight_decay = to_real(key, v);
  else if (key == "clip_norm") c.adam.clip_norm = to_real(key, v);
  else if (key == "window") c.window = to_size(key, v);
  else if (key == "pos_threshold") c.thresholds.positive = to_real(key, v);
  else if (key == "neg_threshold") c.thresholds.negative = to_real(key, v);
  else if (key == "train_ratio") c.split.train = to_real(key, v);
  else if (key == "val_ratio") c.split.val = to_real(key, v);
  else if (key == "batch_size") c.batch_size = to_size(key, v);
  else if (key == "max_epochs") c.max_epochs = to_size(key, v);
  else if (key == "patience") c.patience = to_size(key, v);
  else if (key == "seed") c.seed = c.model.seed = to_size(key, v);
  else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig run_config(const KeyValues& kv, RunConfig base) {
  for (const auto& [k, v] : kv) {
    if (v.find(',') != std::string::npos) throw ConfigError("config: '" + k + "' has a list value; use the grid command");
    set_key(base, k, v);
  }
  base.validate();
  return base;
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "seed=" << c.seed << "\n" << to_text(c.model) << "lr=" << c.adam.lr << "\nbeta1=" << c.adam.beta1 << "\nbeta2=" << c.adam.beta2
     << "\nadam_eps=" << c.adam.eps << "\nweight_decay=" << c.adam.weight_decay << "\nclip_norm=" << c.adam.clip_norm
     << "\nwindow=" << c.window << "\npos_threshold=" << c.thresholds.positive
     << "\nneg_threshold=" << c.thresholds.negative << "\ntrain_ratio=" << c.split.train
     << "\nval_ratio=" << c.split.val << "\nbatch_size=" << c.batch_size << "\nmax_epochs=" << c.max_epochs
     << "\npatience=" << c.patience << "\n";
  return os.str();
}

std::size_t Grid::size() const {
  std::size_t n = 1;
  for (const auto& [k, vals] : axes) {
    n *= vals.size();
    if (n > kMaxGridCombos * 1024) break;
  }
  return n;
}

KeyValues Grid::combo(std::size_t index) const {
  KeyValues out(axes.size());
  for (std::size_t a = axes.size(); a-- > 0;) {
    const auto& vals = axes[a].second;
    out[a] = {axes[a].first, vals[index % vals.size()]};
    index /= vals.size();
  }
  return out;
}

std::vector<RunConfig> Grid::expand(const RunConfig& base) const {
  const std::size_t n = size();
  if (n > kMaxGridCombos)
    throw ConfigError("grid: " + std::to_string(n) + " combinations exceed the limit of " +
                      std::to_string(kMaxGridCombos));
  RunConfig fixed_cfg = base;
  for (const auto& [k, v] : fixed) set_key(fixed_cfg, k, v);
  std::vector<RunConfig> out;
  for (std::size_t i = 0; i < n; ++i) {
    RunConfig c = fixed_cfg;
    for (const auto& [k, v] : combo(i)) set_key(c, k, v);
    c.validate();
    out.push_back(std::move(c));
  }
  return out;
}

Grid parse_grid(const KeyValues& kv, bool default_axes) {
  Grid g;
  std::set<std::string> given;
  for (const auto& [k, v] : kv) {
    given.insert(k);
    if (v.find(',') != std::string::npos) {
      auto vals = split_list(v);
      for (const auto& x : vals)
        if (x.empty()) throw ConfigError("grid: empty list entry for '" + k + "'");
      g.axes.emplace_back(k, std::move(vals));
    } else {
      g.fixed.emplace_back(k, v);
    }
  }
  if (default_axes) {
    const std::pair<const char*, std::vector<std::string>> defaults[] = {
        {"hidden", {"32", "64", "128"}},
        {"heads", {"1", "4", "8", "16"}},
        {"blocks", {"2", "4", "6"}},
        {"dropout", {"0", "0.2", "0.4"}},
    };
    std::size_t at = 0;
    for (const auto& [k, vals] : defaults)
      if (!given.count(k)) g.axes.insert(g.axes.begin() + static_cast<std::ptrdiff_t>(at++), {k, vals});
  }
  return g;
}

std::uint64_t combo_seed(std::uint64_t base, std::size_t index) {
  if (index == 0) return base;
  std::uint64_t x = base ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace hot
