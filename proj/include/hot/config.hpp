#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hot/data.hpp"
#include "hot/model.hpp"
#include "hot/optim.hpp"

namespace hot {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ordered key=value pairs. Blank lines and text after '#' are ignored;
/// duplicate keys are errors.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(std::istream& in, const std::string& source = "config");
KeyValues read_key_values(const std::string& path);

struct RunConfig {
  ModelConfig model;
  AdamConfig adam;  // lr 1e-4 by default
  std::size_t window = 5;
  LabelThresholds thresholds;
  SplitRatios split;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 1000;
  std::size_t patience = 20;
  std::uint64_t seed = 0;  // shuffling and dropout; the key also sets model.seed

  void validate() const;
};

/// Applies one key. Unknown keys and malformed values raise ConfigError.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
RunConfig run_config(const KeyValues& kv, RunConfig base = {});

/// Every key in a fixed order; parsing the text reproduces the config.
std::string to_text(const RunConfig& cfg);

/// Values separated by commas form a grid axis. hidden, heads, blocks and
/// dropout default to {32,64,128}, {1,4,8,16}, {2,4,6}, {0,0.2,0.4} unless the
/// config gives them. The product is expanded in key order with the last
/// axis varying fastest.
struct Grid {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  KeyValues fixed;

  std::size_t size() const;
  std::vector<RunConfig> expand(const RunConfig& base = {}) const;
  /// The axis values of combo `index`, as key=value pairs.
  KeyValues combo(std::size_t index) const;
};

inline constexpr std::size_t kMaxGridCombos = 256;

Grid parse_grid(const KeyValues& kv, bool default_axes = true);

/// Seed of grid combo `index`, independent of evaluation order. Combo 0 keeps
/// the base seed so a one-point grid repeats a plain training run.
std::uint64_t combo_seed(std::uint64_t base, std::size_t index);

}  // namespace hot
