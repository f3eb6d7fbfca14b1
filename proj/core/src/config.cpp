#include "ntkprune/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace ntkprune {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Removes a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

TomlValue parse_scalar(const std::string& raw, std::size_t line) {
  TomlValue v;
  v.line = line;
  const std::string s = trim(raw);
  if (s.empty()) fail(line, "missing value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') fail(line, "unterminated string");
    v.kind = TomlValue::Kind::string;
    v.str = s.substr(1, s.size() - 2);
    return v;
  }
  if (s == "true" || s == "false") {
    v.kind = TomlValue::Kind::boolean;
    v.boolean = (s == "true");
    return v;
  }
  v.kind = TomlValue::Kind::number;
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    fail(line, "cannot parse value '" + s + "'");
  }
  v.number = d;
  if (s.find_first_of(".eE") == std::string::npos) {
    v.is_integer = true;
    v.integer = std::strtoll(s.c_str(), nullptr, 10);
  }
  return v;
}

TomlValue parse_value(const std::string& raw, std::size_t line) {
  const std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') fail(line, "unterminated array");
    TomlValue v;
    v.kind = TomlValue::Kind::array;
    v.line = line;
    const std::string inner = s.substr(1, s.size() - 2);
    std::string cur;
    bool quoted = false;
    std::vector<std::string> parts;
    for (char c : inner) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty() || !parts.empty()) parts.push_back(cur);
    for (const std::string& p : parts) {
      if (trim(p).empty()) fail(line, "empty array element");
      v.array.push_back(parse_scalar(p, line));
    }
    return v;
  }
  return parse_scalar(s, line);
}

}  // namespace

TomlDoc parse_toml(const std::string& text) {
  TomlDoc doc;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      doc[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      fail(line_no, "expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(line_no, "empty key");
    if (doc[section].count(key)) {
      fail(line_no, "duplicate key '" + key + "'");
    }
    doc[section][key] = parse_value(line.substr(eq + 1), line_no);
  }
  return doc;
}

namespace {

struct SectionReader {
  const std::string name;
  const TomlSection* section;
  std::set<std::string> seen;

  bool has(const std::string& key) {
    if (!section) return false;
    const bool present = section->count(key) > 0;
    if (present) seen.insert(key);
    return present;
  }
  const TomlValue& get(const std::string& key) { return section->at(key); }

  [[noreturn]] void wrong_type(const std::string& key, const char* want) {
    fail(get(key).line, "[" + name + "] " + key + " must be " + want);
  }

  std::string str(const std::string& key, const std::string& dflt) {
    if (!has(key)) return dflt;
    const TomlValue& v = get(key);
    if (v.kind != TomlValue::Kind::string) wrong_type(key, "a string");
    return v.str;
  }
  double num(const std::string& key, double dflt) {
    if (!has(key)) return dflt;
    const TomlValue& v = get(key);
    if (v.kind != TomlValue::Kind::number) wrong_type(key, "a number");
    return v.number;
  }
  std::size_t uint(const std::string& key, std::size_t dflt) {
    if (!has(key)) return dflt;
    const TomlValue& v = get(key);
    if (v.kind != TomlValue::Kind::number || !v.is_integer || v.integer < 0) {
      wrong_type(key, "a non-negative integer");
    }
    return static_cast<std::size_t>(v.integer);
  }
  bool boolean(const std::string& key, bool dflt) {
    if (!has(key)) return dflt;
    const TomlValue& v = get(key);
    if (v.kind != TomlValue::Kind::boolean) wrong_type(key, "a boolean");
    return v.boolean;
  }
  std::vector<double> num_list(const std::string& key,
                               std::vector<double> dflt) {
    if (!has(key)) return dflt;
    const TomlValue& v = get(key);
    if (v.kind != TomlValue::Kind::array) wrong_type(key, "an array");
    std::vector<double> out;
    for (const TomlValue& e : v.array) {
      if (e.kind != TomlValue::Kind::number) wrong_type(key, "a number array");
      out.push_back(e.number);
    }
    return out;
  }
  std::vector<std::size_t> uint_list(const std::string& key,
                                     std::vector<std::size_t> dflt) {
    if (!has(key)) return dflt;
    const TomlValue& v = get(key);
    if (v.kind != TomlValue::Kind::array) wrong_type(key, "an array");
    std::vector<std::size_t> out;
    for (const TomlValue& e : v.array) {
      if (e.kind != TomlValue::Kind::number || !e.is_integer || e.integer < 0) {
        wrong_type(key, "a non-negative integer array");
      }
      out.push_back(static_cast<std::size_t>(e.integer));
    }
    return out;
  }
  std::vector<std::string> str_list(const std::string& key,
                                    std::vector<std::string> dflt) {
    if (!has(key)) return dflt;
    const TomlValue& v = get(key);
    if (v.kind != TomlValue::Kind::array) wrong_type(key, "an array");
    std::vector<std::string> out;
    for (const TomlValue& e : v.array) {
      if (e.kind != TomlValue::Kind::string) wrong_type(key, "a string array");
      out.push_back(e.str);
    }
    return out;
  }

  void finish() {
    if (!section) return;
    for (const auto& [key, value] : *section) {
      if (!seen.count(key)) {
        fail(value.line, "unknown key '" + key + "' in [" + name + "]");
      }
    }
  }
};

SectionReader reader(const TomlDoc& doc, const std::string& name) {
  const auto it = doc.find(name);
  return SectionReader{name, it == doc.end() ? nullptr : &it->second, {}};
}

}  // namespace

Architecture ArchConfig::to_architecture() const {
  if (kind == "mlp") {
    return mlp_architecture(input, hidden, classes, init);
  }
  return cnn_architecture(input_channels, input_height, input_width,
                          conv_channels, kernel, pad, hidden, classes, init);
}

std::size_t ExperimentConfig::classes() const { return arch.classes; }

std::size_t ExperimentConfig::derived_batches_per_round() const {
  if (prune.batches_per_round > 0) return prune.batches_per_round;
  const std::size_t want = 10 * classes();
  return (want + prune.batch_size - 1) / prune.batch_size;
}

PruneConfig ExperimentConfig::make_prune_config(PruneMethod method,
                                                double sparsity,
                                                std::uint64_t seed,
                                                std::size_t rounds,
                                                double epsilon) const {
  PruneConfig cfg;
  cfg.method = method;
  cfg.density = 1.0 - sparsity;
  cfg.rounds = rounds;
  cfg.batches_per_round = derived_batches_per_round();
  cfg.batch_size = prune.batch_size;
  cfg.epsilon = epsilon;
  cfg.reinit_count = prune.reinit_count;
  cfg.input_source = prune.input_source;
  cfg.seed = seed;
  return cfg;
}

TrainConfig ExperimentConfig::make_train_config(std::uint64_t seed) const {
  TrainConfig cfg;
  cfg.epochs = train.epochs;
  cfg.batch_size = train.batch_size;
  cfg.lr = train.lr;
  cfg.momentum = train.momentum;
  cfg.lr_drop_epochs = train.lr_drop_epochs;
  cfg.lr_drop_factor = train.lr_drop_factor;
  cfg.weight_decay = train.weight_decay;
  cfg.loss = train.loss;
  cfg.seed = seed;
  return cfg;
}

namespace {

void put_kv(std::string& out, const std::string& key, const std::string& v) {
  out += key;
  out += '=';
  out += v;
  out += '\n';
}

std::string num_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
std::string list_str(const std::vector<T>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>) {
      out += num_str(v[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out + "]";
}

}  // namespace

std::string ExperimentConfig::canonical() const {
  std::string s;
  put_kv(s, "arch.kind", arch.kind);
  put_kv(s, "arch.input", std::to_string(arch.input));
  put_kv(s, "arch.input_channels", std::to_string(arch.input_channels));
  put_kv(s, "arch.input_height", std::to_string(arch.input_height));
  put_kv(s, "arch.input_width", std::to_string(arch.input_width));
  put_kv(s, "arch.conv_channels", list_str(arch.conv_channels));
  put_kv(s, "arch.kernel", std::to_string(arch.kernel));
  put_kv(s, "arch.pad", std::to_string(arch.pad));
  put_kv(s, "arch.hidden", list_str(arch.hidden));
  put_kv(s, "arch.classes", std::to_string(arch.classes));
  put_kv(s, "arch.init",
         arch.init == InitKind::kaiming_normal ? "kaiming_normal"
                                               : "xavier_normal");
  put_kv(s, "data.source",
         data.source == DataSource::blobs
             ? "blobs"
             : (data.source == DataSource::two_moons ? "two_moons" : "idx"));
  put_kv(s, "data.classes", std::to_string(data.classes));
  put_kv(s, "data.dim", std::to_string(data.dim));
  put_kv(s, "data.spread", num_str(data.spread));
  put_kv(s, "data.noise", num_str(data.noise));
  put_kv(s, "data.train_per_class", std::to_string(data.train_per_class));
  put_kv(s, "data.test_per_class", std::to_string(data.test_per_class));
  put_kv(s, "data.seed", std::to_string(data.seed));
  put_kv(s, "data.images", data.images);
  put_kv(s, "data.labels", data.labels);
  put_kv(s, "data.test_images", data.test_images);
  put_kv(s, "data.test_labels", data.test_labels);
  put_kv(s, "prune.rounds", std::to_string(prune.rounds));
  put_kv(s, "prune.batches_per_round",
         std::to_string(prune.batches_per_round));
  put_kv(s, "prune.batch_size", std::to_string(prune.batch_size));
  put_kv(s, "prune.epsilon", num_str(prune.epsilon));
  put_kv(s, "prune.reinit_count", std::to_string(prune.reinit_count));
  put_kv(s, "prune.input_source",
         prune.input_source == InputSource::dataset ? "dataset"
                                                    : "gaussian_noise");
  put_kv(s, "prune.subset_per_class",
         std::to_string(prune.subset_per_class));
  put_kv(s, "train.epochs", std::to_string(train.epochs));
  put_kv(s, "train.batch_size", std::to_string(train.batch_size));
  put_kv(s, "train.lr", num_str(train.lr));
  put_kv(s, "train.momentum", num_str(train.momentum));
  put_kv(s, "train.lr_drop_epochs", list_str(train.lr_drop_epochs));
  put_kv(s, "train.lr_drop_factor", num_str(train.lr_drop_factor));
  put_kv(s, "train.weight_decay", num_str(train.weight_decay));
  put_kv(s, "train.loss",
         train.loss == LossKind::cross_entropy ? "cross_entropy"
                                               : "squared_error");
  put_kv(s, "train.train_init",
         train.train_init == TrainInit::fresh ? "fresh"
                                              : "reuse_last_scoring");
  put_kv(s, "sweep.methods", list_str(sweep.methods));
  put_kv(s, "sweep.sparsities", list_str(sweep.sparsities));
  {
    std::vector<std::size_t> seeds;
    for (std::uint64_t v : sweep.seeds) {
      seeds.push_back(static_cast<std::size_t>(v));
    }
    put_kv(s, "sweep.seeds", list_str(seeds));
  }
  put_kv(s, "sweep.rounds_list", list_str(sweep.rounds_list));
  put_kv(s, "sweep.epsilon_list", list_str(sweep.epsilon_list));
  put_kv(s, "sweep.include_dense", sweep.include_dense ? "true" : "false");
  put_kv(s, "sweep.spectrum_batch", std::to_string(sweep.spectrum_batch));
  put_kv(s, "sweep.spectrum_seed", std::to_string(sweep.spectrum_seed));
  put_kv(s, "sweep.spectrum_max_dim", std::to_string(sweep.spectrum_max_dim));
  put_kv(s, "out", out);
  return s;
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string c = canonical();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : c) {
    h ^= ch;
    h *= 0x00000100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash_hex() const {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash()));
  return buf;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  const TomlDoc doc = parse_toml(text);
  for (const auto& [name, section] : doc) {
    if (name != "arch" && name != "data" && name != "prune" &&
        name != "train" && name != "sweep" && name != "") {
      throw ConfigError("config: unknown section [" + name + "]");
    }
  }

  ExperimentConfig cfg;

  SectionReader root = reader(doc, "");
  cfg.out = root.str("out", "");
  root.finish();

  SectionReader arch = reader(doc, "arch");
  cfg.arch.kind = arch.str("kind", "mlp");
  if (cfg.arch.kind != "mlp" && cfg.arch.kind != "cnn") {
    throw ConfigError("config: [arch] kind must be \"mlp\" or \"cnn\"");
  }
  cfg.arch.input = arch.uint("input", 0);
  cfg.arch.input_channels = arch.uint("input_channels", 1);
  cfg.arch.input_height = arch.uint("input_height", 0);
  cfg.arch.input_width = arch.uint("input_width", 0);
  cfg.arch.conv_channels = arch.uint_list("conv_channels", {});
  cfg.arch.kernel = arch.uint("kernel", 3);
  cfg.arch.pad = arch.uint("pad", 1);
  cfg.arch.hidden = arch.uint_list("hidden", {});
  cfg.arch.classes = arch.uint("classes", 0);
  const std::string init = arch.str("init", "kaiming_normal");
  if (init == "kaiming_normal") {
    cfg.arch.init = InitKind::kaiming_normal;
  } else if (init == "xavier_normal") {
    cfg.arch.init = InitKind::xavier_normal;
  } else {
    throw ConfigError("config: [arch] init must be kaiming_normal or "
                      "xavier_normal");
  }
  arch.finish();
  if (cfg.arch.classes == 0) {
    throw ConfigError("config: [arch] classes must be set");
  }

  SectionReader data = reader(doc, "data");
  const std::string source = data.str("source", "blobs");
  if (source == "blobs") {
    cfg.data.source = DataSource::blobs;
  } else if (source == "two_moons") {
    cfg.data.source = DataSource::two_moons;
  } else if (source == "idx") {
    cfg.data.source = DataSource::idx;
  } else {
    throw ConfigError("config: [data] source must be blobs, two_moons or idx");
  }
  cfg.data.classes = data.uint("classes", cfg.arch.classes);
  cfg.data.dim = data.uint("dim", cfg.arch.input);
  cfg.data.spread = data.num("spread", 0.25);
  cfg.data.noise = data.num("noise", 0.1);
  cfg.data.train_per_class = data.uint("train_per_class", 100);
  cfg.data.test_per_class = data.uint("test_per_class", 100);
  cfg.data.seed = data.uint("seed", 1);
  cfg.data.images = data.str("images", "");
  cfg.data.labels = data.str("labels", "");
  cfg.data.test_images = data.str("test_images", "");
  cfg.data.test_labels = data.str("test_labels", "");
  data.finish();

  SectionReader prune = reader(doc, "prune");
  cfg.prune.rounds = prune.uint("rounds", 1);
  cfg.prune.batches_per_round = prune.uint("batches_per_round", 0);
  cfg.prune.batch_size = prune.uint("batch_size", 10);
  cfg.prune.epsilon = prune.num("epsilon", 1e-4);
  cfg.prune.reinit_count = prune.uint("reinit_count", 1);
  const std::string input_source = prune.str("input_source", "gaussian_noise");
  if (input_source == "gaussian_noise") {
    cfg.prune.input_source = InputSource::gaussian_noise;
  } else if (input_source == "dataset") {
    cfg.prune.input_source = InputSource::dataset;
  } else {
    throw ConfigError("config: [prune] input_source must be gaussian_noise "
                      "or dataset");
  }
  cfg.prune.subset_per_class = prune.uint("subset_per_class", 10);
  prune.finish();

  SectionReader train = reader(doc, "train");
  cfg.train.epochs = train.uint("epochs", 20);
  cfg.train.batch_size = train.uint("batch_size", 32);
  cfg.train.lr = train.num("lr", 0.1);
  cfg.train.momentum = train.num("momentum", 0.9);
  cfg.train.lr_drop_epochs = train.uint_list("lr_drop_epochs", {});
  cfg.train.lr_drop_factor = train.num("lr_drop_factor", 0.1);
  cfg.train.weight_decay = train.num("weight_decay", 0.0);
  const std::string loss = train.str("loss", "cross_entropy");
  if (loss == "cross_entropy") {
    cfg.train.loss = LossKind::cross_entropy;
  } else if (loss == "squared_error") {
    cfg.train.loss = LossKind::squared_error;
  } else {
    throw ConfigError("config: [train] loss must be cross_entropy or "
                      "squared_error");
  }
  const std::string train_init = train.str("train_init", "fresh");
  if (train_init == "fresh") {
    cfg.train.train_init = TrainInit::fresh;
  } else if (train_init == "reuse_last_scoring") {
    cfg.train.train_init = TrainInit::reuse_last_scoring;
  } else {
    throw ConfigError("config: [train] train_init must be fresh or "
                      "reuse_last_scoring");
  }
  train.finish();

  SectionReader sweep = reader(doc, "sweep");
  cfg.sweep.methods = sweep.str_list("methods", {"ntksap"});
  cfg.sweep.sparsities = sweep.num_list("sparsities", {0.5});
  {
    const std::vector<std::size_t> seeds = sweep.uint_list("seeds", {1});
    cfg.sweep.seeds.assign(seeds.begin(), seeds.end());
  }
  cfg.sweep.rounds_list = sweep.uint_list("rounds_list", {});
  cfg.sweep.epsilon_list = sweep.num_list("epsilon_list", {});
  cfg.sweep.include_dense = sweep.boolean("include_dense", false);
  cfg.sweep.spectrum_batch = sweep.uint("spectrum_batch", 100);
  cfg.sweep.spectrum_seed = sweep.uint("spectrum_seed", 7);
  cfg.sweep.spectrum_max_dim = sweep.uint("spectrum_max_dim", 1024);
  sweep.finish();

  // Cross-section validation.
  for (const std::string& m : cfg.sweep.methods) {
    PruneMethod pm;
    try {
      pm = method_from_name(m);
    } catch (const NumericError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (method_needs_labels(pm) &&
        cfg.prune.input_source != InputSource::dataset) {
      throw ConfigError("config: method " + m +
                        " requires labeled data; set [prune] input_source = "
                        "\"dataset\"");
    }
  }
  for (double sp : cfg.sweep.sparsities) {
    if (sp < 0.0 || sp >= 1.0) {
      throw ConfigError("config: sparsities must lie in [0,1), got " +
                        num_str(sp));
    }
  }
  if (cfg.sweep.seeds.empty()) {
    throw ConfigError("config: seed list is empty");
  }
  if (cfg.data.source != DataSource::idx &&
      cfg.data.classes != cfg.arch.classes) {
    throw ConfigError("config: [data] classes " +
                      std::to_string(cfg.data.classes) +
                      " does not match [arch] classes " +
                      std::to_string(cfg.arch.classes));
  }
  if (cfg.data.source == DataSource::idx &&
      (cfg.data.images.empty() || cfg.data.labels.empty())) {
    throw ConfigError("config: [data] source idx needs images and labels");
  }
  if (cfg.data.source == DataSource::two_moons && cfg.arch.classes != 2) {
    throw ConfigError("config: two_moons provides 2 classes");
  }
  try {
    cfg.arch.to_architecture();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const char* offset = std::getenv("NTKPRUNE_SEED_OFFSET");
  if (offset && *offset) {
    char* end = nullptr;
    const long long v = std::strtoll(offset, &end, 10);
    if (end == offset || *end != '\0') {
      throw ConfigError("config: NTKPRUNE_SEED_OFFSET must be an integer");
    }
    cfg.seed_offset = v;
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_experiment_config(text);
}

}  // namespace ntkprune
