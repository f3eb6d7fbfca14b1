#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ntkprune/nn.hpp"
#include "ntkprune/prune.hpp"
#include "ntkprune/train.hpp"

namespace ntkprune {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Minimal TOML-style document: [section] headers, `key = value` lines,
// # comments. Values are strings, booleans, numbers, or flat arrays.
struct TomlValue {
  enum class Kind { string, boolean, number, array };
  Kind kind = Kind::number;
  std::string str;
  bool boolean = false;
  double number = 0.0;
  long long integer = 0;
  bool is_integer = false;
  std::vector<TomlValue> array;
  std::size_t line = 0;
};

using TomlSection = std::map<std::string, TomlValue>;
using TomlDoc = std::map<std::string, TomlSection>;

// Throws ConfigError with a line number on malformed input.
TomlDoc parse_toml(const std::string& text);

enum class DataSource { blobs, two_moons, idx };
enum class TrainInit { fresh, reuse_last_scoring };

struct ArchConfig {
  std::string kind = "mlp";  // "mlp" | "cnn"
  std::size_t input = 0;     // mlp input features
  std::size_t input_channels = 1, input_height = 0, input_width = 0;
  std::vector<std::size_t> conv_channels;
  std::size_t kernel = 3, pad = 1;
  std::vector<std::size_t> hidden;
  std::size_t classes = 0;
  InitKind init = InitKind::kaiming_normal;

  Architecture to_architecture() const;
};

struct DataConfig {
  DataSource source = DataSource::blobs;
  std::size_t classes = 0;  // 0 = take from [arch]
  std::size_t dim = 0;      // 0 = take from [arch] input
  double spread = 0.25;
  double noise = 0.1;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  std::uint64_t seed = 1;
  std::string images, labels, test_images, test_labels;  // idx paths
};

struct PruneSection {
  std::size_t rounds = 1;
  std::size_t batches_per_round = 0;  // 0 = ceil(10 * classes / batch_size)
  std::size_t batch_size = 10;
  double epsilon = 1e-4;
  std::size_t reinit_count = 1;
  InputSource input_source = InputSource::gaussian_noise;
  std::size_t subset_per_class = 10;
};

struct TrainSection {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double momentum = 0.9;
  std::vector<std::size_t> lr_drop_epochs;
  double lr_drop_factor = 0.1;
  double weight_decay = 0.0;
  LossKind loss = LossKind::cross_entropy;
  TrainInit train_init = TrainInit::fresh;
};

struct SweepSection {
  std::vector<std::string> methods = {"ntksap"};
  std::vector<double> sparsities = {0.5};
  std::vector<std::uint64_t> seeds = {1};
  std::vector<std::size_t> rounds_list;   // optional T ablation axis
  std::vector<double> epsilon_list;       // optional epsilon ablation axis
  bool include_dense = false;
  std::size_t spectrum_batch = 100;
  std::uint64_t spectrum_seed = 7;
  std::size_t spectrum_max_dim = 1024;
};

struct ExperimentConfig {
  ArchConfig arch;
  DataConfig data;
  PruneSection prune;
  TrainSection train;
  SweepSection sweep;
  std::string out;  // optional default output dir from the file
  std::int64_t seed_offset = 0;  // from NTKPRUNE_SEED_OFFSET, not hashed

  std::size_t classes() const;
  std::size_t derived_batches_per_round() const;

  // Canonical `section.key=value` dump of every semantic field (defaults
  // applied, seed offset excluded); the config hash is FNV-1a over it.
  std::string canonical() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;

  PruneConfig make_prune_config(PruneMethod method, double sparsity,
                                std::uint64_t seed, std::size_t rounds,
                                double epsilon) const;
  TrainConfig make_train_config(std::uint64_t seed) const;

  std::uint64_t offset_seed(std::uint64_t s) const {
    return s + static_cast<std::uint64_t>(seed_offset);
  }
};

// Parses, validates (unknown keys and cross-section inconsistencies are
// errors) and applies NTKPRUNE_SEED_OFFSET from the environment.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& text);

}  // namespace ntkprune
