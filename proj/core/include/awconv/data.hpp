#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "awconv/rng.hpp"
#include "awconv/tensor.hpp"

namespace awconv {

struct Dataset {
  std::string name;
  Tensor<float> images;  // (N,3,H,W), raw values in [0,1]
  std::vector<int32_t> labels;
  int64_t classes = 0;
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};

  int64_t size() const { return images.defined() ? images.extent(0) : 0; }
  int64_t hw() const { return images.extent(2); }
};

enum class CifarKind { cifar10, cifar100 };

// Binary records: CIFAR-10 is one label byte plus 3072 channel-planar pixel
// bytes; CIFAR-100 prepends a coarse label byte and the fine label is used.
// Pixels decode as v/255.
Dataset read_cifar(const std::string& path, CifarKind kind);
Dataset read_cifar(const std::vector<std::string>& paths, CifarKind kind);

// Writes CIFAR-10-layout records (decoding is lossless modulo the /255
// scaling, so a decoded record re-encodes to the source bytes).
void write_cifar10_style(const Dataset& d, const std::string& path);

// Procedural discrimination task: one rectangle, triangle, or ellipse of
// random size/position/color on a noisy background. Class-balanced and
// bitwise reproducible per seed.
Dataset gen_shapes(uint64_t seed, int64_t n, int64_t classes = 3, int64_t hw = 32);

enum class Augment { none, flip, crop, flip_crop };
Augment parse_augment(const std::string& s);
const char* augment_name(Augment a);

struct LabeledBatch {
  Tensor<float> images;  // normalized
  std::vector<int32_t> labels;
  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

// Deterministic per (shuffle_seed, epoch); the last partial batch is kept.
// Normalization uses the dataset's per-channel mean/stddev; augmentation is
// random horizontal flip and/or 4-pixel zero-pad-then-crop.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, int64_t batch_size, uint64_t shuffle_seed, int64_t epoch,
                Augment augment, bool shuffle);
  std::optional<LabeledBatch> next();
  int64_t num_batches() const;

 private:
  const Dataset& data_;
  std::vector<int64_t> order_;
  int64_t batch_size_;
  int64_t cursor_ = 0;
  Augment augment_;
  Rng rng_;
};

BatchIterator batches(const Dataset& data, int64_t batch_size, uint64_t shuffle_seed,
                      int64_t epoch, Augment augment = Augment::none, bool shuffle = true);

}  // namespace awconv
