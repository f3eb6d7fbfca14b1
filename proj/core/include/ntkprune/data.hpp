#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ntkprune/rng.hpp"
#include "ntkprune/tensor.hpp"

namespace ntkprune {

struct Dataset {
  Tensor inputs;            // (n, features...) row-major
  std::vector<int> labels;  // values in [0, classes)
  std::size_t classes = 0;
  std::string split;  // "train" or "test"

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const {
    Shape s(inputs.shape().begin() + 1, inputs.shape().end());
    return s;
  }
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

// Gaussian class clusters around unit-norm centers, per-feature standardized
// with constants computed on the train split and applied to both. Samples
// are laid out class-major (all of class 0, then class 1, ...).
TrainTestSplit gen_blobs(std::size_t classes, std::size_t train_per_class,
                         std::size_t test_per_class, std::size_t dim,
                         double spread, std::uint64_t seed);

// Two interleaved half circles with additive Gaussian noise, standardized
// like gen_blobs. Class 0 is the upper arc, class 1 the lower.
TrainTestSplit gen_two_moons(std::size_t train_per_class,
                             std::size_t test_per_class, double noise,
                             std::uint64_t seed);

// IDX image/label pair (big-endian magics 0x00000803 / 0x00000801). Pixels
// are scaled to [0,1] and standardized with the fixed constants
// (x - 0.1307) / 0.3081. Distinct diagnostics for bad magic, truncation and
// image/label count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t classes = 10, std::string split = "train");

void save_idx(const Dataset& raw_images, const std::string& images_path,
              const std::string& labels_path);

// Standard normal tensor of the given shape.
Tensor gaussian_batch(const Shape& shape, std::uint64_t seed);
Tensor gaussian_batch(const Shape& shape, Rng& rng);

// Exactly class-balanced subset: per_class samples from every class, chosen
// by a seeded shuffle of each class's index list, assembled class-major.
// Classes with fewer than per_class samples are an error.
Dataset pruning_subset(const Dataset& data, std::size_t per_class,
                       std::uint64_t seed);

// Consecutive chunks of at most batch_size samples, in dataset order.
std::vector<Batch> make_batches(const Dataset& data, std::size_t batch_size);

Batch take_batch(const Dataset& data, std::size_t begin, std::size_t count);

// CSV schema: label,f0,f1,...
void write_dataset_csv(const Dataset& data, const std::string& path);

}  // namespace ntkprune
