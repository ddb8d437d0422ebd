#pragma once

// Batch command-line front end: simulate, tune, train, predict, evaluate and
// importance. Settings are layered as profile defaults, then an optional
// key-value file, then flags; later layers win.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tvcm/boosting.hpp"
#include "tvcm/config.hpp"
#include "tvcm/data.hpp"

namespace tvcm::cli {

inline constexpr const char* kErrorPrefix = "tvcm: error: ";

/// Fully validated settings of one invocation.
struct RunConfig {
  KeyValueConfig values;  // merged layers, for command-specific keys
  std::string profile;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir;
  LossSpec loss;
  LinkSpec link;
  TreeConfig tree;
  double epsilon = 0.01;
  int kappa_max = 0;
  StoppingRule rule;
  bool parallel_onehot = false;
  std::vector<int> kappa;  // from the `kappa` key, may be empty

  Eigen::Index n = 0;          // simulate
  double train_fraction = 0.5;  // simulate and random splits
  std::string split_mode;      // none | random | index
  std::uint64_t split_seed = 1;
  std::string index_file;
  std::string data, train, test;
  int rolling_window = 1000;
  std::optional<CsvSchema> schema;
};

/// Built-in defaults of the "sim" and "real" profiles.
KeyValueConfig profile_defaults(const std::string& name);

/// Layers profile, `config` file (when the flags name one) and flags, then
/// validates every known key. ContractError on unknown keys or bad values.
RunConfig resolve_config(const KeyValueConfig& flags);

/// Raw (not one-hot encoded) rows of the "train", "test" or "all" part.
Dataset load_part(const RunConfig& rc, const std::string& part);

/// Runs one command line without the program name. Returns the exit code;
/// diagnostics go to `err` behind kErrorPrefix.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tvcm::cli
