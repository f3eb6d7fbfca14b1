#include "ntkprune/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace ntkprune {

namespace {

constexpr double kIdxMean = 0.1307;
constexpr double kIdxStd = 0.3081;

// Per-feature standardization fitted on train, applied to both splits.
void standardize(Tensor& train, Tensor& test, std::size_t features) {
  const std::size_t n_train = train.extent(0);
  std::vector<double> mean(features, 0.0), sd(features, 0.0);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      mean[f] += train[i * features + f];
    }
  }
  for (double& m : mean) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      const double d = train[i * features + f] - mean[f];
      sd[f] += d * d;
    }
  }
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(n_train));
    if (s < 1e-12) s = 1.0;
  }
  for (std::size_t i = 0; i < train.size() / features; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      train[i * features + f] = (train[i * features + f] - mean[f]) / sd[f];
    }
  }
  for (std::size_t i = 0; i < test.size() / features; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      test[i * features + f] = (test[i * features + f] - mean[f]) / sd[f];
    }
  }
}

}  // namespace

TrainTestSplit gen_blobs(std::size_t classes, std::size_t train_per_class,
                         std::size_t test_per_class, std::size_t dim,
                         double spread, std::uint64_t seed) {
  if (classes == 0 || dim == 0 || train_per_class == 0) {
    throw ShapeError("gen_blobs: classes, dim and train_per_class must be > 0");
  }
  Rng base(seed);
  std::vector<std::vector<double>> centers(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    Rng r = base.fork(streams::data_centers, c);
    centers[c].resize(dim);
    double norm = 0.0;
    for (double& v : centers[c]) {
      v = r.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (double& v : centers[c]) v /= norm;
  }

  auto fill_split = [&](std::size_t per_class, std::uint64_t split_tag,
                        const char* name) {
    Dataset d;
    d.classes = classes;
    d.split = name;
    d.inputs = Tensor({classes * per_class, dim});
    d.labels.resize(classes * per_class);
    for (std::size_t c = 0; c < classes; ++c) {
      Rng r = base.fork(streams::data_samples, split_tag, c);
      for (std::size_t i = 0; i < per_class; ++i) {
        const std::size_t row = c * per_class + i;
        d.labels[row] = static_cast<int>(c);
        for (std::size_t f = 0; f < dim; ++f) {
          d.inputs[row * dim + f] = centers[c][f] + spread * r.normal();
        }
      }
    }
    return d;
  };

  TrainTestSplit out;
  out.train = fill_split(train_per_class, 0, "train");
  out.test = fill_split(test_per_class, 1, "test");
  if (test_per_class > 0) {
    standardize(out.train.inputs, out.test.inputs, dim);
  } else {
    Tensor empty({0, dim});
    standardize(out.train.inputs, empty, dim);
  }
  return out;
}

TrainTestSplit gen_two_moons(std::size_t train_per_class,
                             std::size_t test_per_class, double noise,
                             std::uint64_t seed) {
  if (train_per_class == 0) {
    throw ShapeError("gen_two_moons: train_per_class must be > 0");
  }
  constexpr double kPi = 3.14159265358979323846;
  Rng base(seed);

  auto fill_split = [&](std::size_t per_class, std::uint64_t split_tag,
                        const char* name) {
    Dataset d;
    d.classes = 2;
    d.split = name;
    d.inputs = Tensor({2 * per_class, 2});
    d.labels.resize(2 * per_class);
    for (std::size_t c = 0; c < 2; ++c) {
      Rng r = base.fork(streams::data_samples, split_tag, c);
      for (std::size_t i = 0; i < per_class; ++i) {
        const std::size_t row = c * per_class + i;
        const double t = kPi * r.uniform();
        double x, y;
        if (c == 0) {
          x = std::cos(t);
          y = std::sin(t);
        } else {
          x = 1.0 - std::cos(t);
          y = 0.5 - std::sin(t);
        }
        d.labels[row] = static_cast<int>(c);
        d.inputs[row * 2 + 0] = x + noise * r.normal();
        d.inputs[row * 2 + 1] = y + noise * r.normal();
      }
    }
    return d;
  };

  TrainTestSplit out;
  out.train = fill_split(train_per_class, 0, "train");
  out.test = fill_split(test_per_class, 1, "test");
  if (test_per_class > 0) {
    standardize(out.train.inputs, out.test.inputs, 2);
  } else {
    Tensor empty({0, 2});
    standardize(out.train.inputs, empty, 2);
  }
  return out;
}

namespace {

std::uint32_t read_be32(const std::string& buf, std::size_t pos,
                        const std::string& path) {
  if (pos + 4 > buf.size()) {
    throw IoError("idx: truncated header in " + path);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
  }
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("idx: cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t classes, std::string split) {
  const std::string img = slurp(images_path);
  const std::string lab = slurp(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != 0x00000803u) {
    throw IoError("idx: bad image magic in " + images_path);
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801u) {
    throw IoError("idx: bad label magic in " + labels_path);
  }
  const std::uint32_t n_img = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t n_lab = read_be32(lab, 4, labels_path);
  if (n_img != n_lab) {
    throw IoError("idx: image count " + std::to_string(n_img) +
                  " does not match label count " + std::to_string(n_lab));
  }
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (img.size() != 16 + static_cast<std::size_t>(n_img) * pixels) {
    throw IoError("idx: truncated image data in " + images_path);
  }
  if (lab.size() != 8 + static_cast<std::size_t>(n_lab)) {
    throw IoError("idx: truncated label data in " + labels_path);
  }

  Dataset d;
  d.classes = classes;
  d.split = std::move(split);
  d.inputs = Tensor({n_img, pixels});
  d.labels.resize(n_img);
  for (std::size_t i = 0; i < n_img; ++i) {
    const int label = static_cast<unsigned char>(lab[8 + i]);
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw IoError("idx: label " + std::to_string(label) + " outside [0," +
                    std::to_string(classes) + ") in " + labels_path);
    }
    d.labels[i] = label;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double px =
          static_cast<unsigned char>(img[16 + i * pixels + p]) / 255.0;
      d.inputs[i * pixels + p] = (px - kIdxMean) / kIdxStd;
    }
  }
  return d;
}

void save_idx(const Dataset& raw_images, const std::string& images_path,
              const std::string& labels_path) {
  const std::size_t n = raw_images.size();
  const Shape sample = raw_images.sample_shape();
  std::size_t rows, cols;
  if (sample.size() == 2) {
    rows = sample[0];
    cols = sample[1];
  } else if (sample.size() == 1) {
    rows = 1;
    cols = sample[0];
  } else {
    throw ShapeError("save_idx: samples must be rank 1 or 2, got " +
                     shape_str(sample));
  }
  auto put_be32 = [](std::string& buf, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) {
      buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  };
  std::string img;
  put_be32(img, 0x00000803u);
  put_be32(img, static_cast<std::uint32_t>(n));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  const std::size_t pixels = rows * cols;
  for (std::size_t i = 0; i < n * pixels; ++i) {
    double v = raw_images.inputs[i];
    if (v < 0.0) v = 0.0;
    if (v > 255.0) v = 255.0;
    img.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  std::string lab;
  put_be32(lab, 0x00000801u);
  put_be32(lab, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    lab.push_back(static_cast<char>(raw_images.labels[i]));
  }
  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  if (!fi) throw IoError("idx: cannot open " + images_path);
  fi.write(img.data(), static_cast<std::streamsize>(img.size()));
  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  if (!fl) throw IoError("idx: cannot open " + labels_path);
  fl.write(lab.data(), static_cast<std::streamsize>(lab.size()));
}

Tensor gaussian_batch(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_batch(shape, rng);
}

Tensor gaussian_batch(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

Dataset pruning_subset(const Dataset& data, std::size_t per_class,
                       std::uint64_t seed) {
  if (per_class == 0) {
    throw ShapeError("pruning_subset: per_class must be > 0");
  }
  std::vector<std::vector<std::size_t>> by_class(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[data.labels[i]].push_back(i);
  }
  Rng base(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(per_class * data.classes);
  for (std::size_t c = 0; c < data.classes; ++c) {
    if (by_class[c].size() < per_class) {
      throw ShapeError("pruning_subset: class " + std::to_string(c) +
                       " has " + std::to_string(by_class[c].size()) +
                       " samples, need " + std::to_string(per_class));
    }
    Rng r = base.fork(streams::subset, c);
    r.shuffle(by_class[c]);
    chosen.insert(chosen.end(), by_class[c].begin(),
                  by_class[c].begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  const std::size_t features = shape_size(data.sample_shape());
  Dataset out;
  out.classes = data.classes;
  out.split = data.split;
  Shape shape = data.inputs.shape();
  shape[0] = chosen.size();
  out.inputs = Tensor(shape);
  out.labels.resize(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    out.labels[i] = data.labels[chosen[i]];
    std::memcpy(out.inputs.data() + i * features,
                data.inputs.data() + chosen[i] * features,
                features * sizeof(double));
  }
  return out;
}

Batch take_batch(const Dataset& data, std::size_t begin, std::size_t count) {
  if (begin + count > data.size()) {
    throw ShapeError("take_batch: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside dataset of " +
                     std::to_string(data.size()));
  }
  const std::size_t features = shape_size(data.sample_shape());
  Shape shape = data.inputs.shape();
  shape[0] = count;
  Batch b;
  b.inputs = Tensor(shape);
  b.labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                  data.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  std::memcpy(b.inputs.data(), data.inputs.data() + begin * features,
              count * features * sizeof(double));
  return b;
}

std::vector<Batch> make_batches(const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) {
    throw ShapeError("make_batches: batch_size must be > 0");
  }
  std::vector<Batch> out;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    out.push_back(take_batch(data, begin, count));
  }
  return out;
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("dataset csv: cannot open " + path);
  const std::size_t features = shape_size(data.sample_shape());
  out << "label";
  for (std::size_t f = 0; f < features; ++f) out << ",f" << f;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i];
    for (std::size_t f = 0; f < features; ++f) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.inputs[i * features + f]);
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("dataset csv: write failed for " + path);
}

}  // namespace ntkprune
