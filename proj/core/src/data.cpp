#include "awconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "awconv/errors.hpp"

namespace awconv {

namespace {

constexpr std::array<float, 3> kCifar10Mean{0.4914f, 0.4822f, 0.4465f};
constexpr std::array<float, 3> kCifar10Std{0.2470f, 0.2435f, 0.2616f};
constexpr std::array<float, 3> kCifar100Mean{0.5071f, 0.4865f, 0.4409f};
constexpr std::array<float, 3> kCifar100Std{0.2673f, 0.2564f, 0.2762f};

constexpr int64_t kCifarHw = 32;
constexpr int64_t kCifarPixels = 3 * kCifarHw * kCifarHw;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

}  // namespace

Dataset read_cifar(const std::string& path, CifarKind kind) {
  return read_cifar(std::vector<std::string>{path}, kind);
}

Dataset read_cifar(const std::vector<std::string>& paths, CifarKind kind) {
  const int64_t label_bytes = kind == CifarKind::cifar10 ? 1 : 2;
  const int64_t record = label_bytes + kCifarPixels;
  const int64_t classes = kind == CifarKind::cifar10 ? 10 : 100;

  std::vector<uint8_t> bytes;
  for (const std::string& p : paths) {
    std::vector<uint8_t> chunk = read_file(p);
    if (static_cast<int64_t>(chunk.size()) % record != 0) {
      const int64_t full = (static_cast<int64_t>(chunk.size()) / record) * record;
      throw FormatError("'" + p + "': truncated record at byte offset " + std::to_string(full) +
                        " (file size " + std::to_string(chunk.size()) +
                        " is not a multiple of " + std::to_string(record) + ")");
    }
    bytes.insert(bytes.end(), chunk.begin(), chunk.end());
  }
  const int64_t n = static_cast<int64_t>(bytes.size()) / record;
  if (n < 1) throw FormatError("no records found");

  Dataset d;
  d.name = kind == CifarKind::cifar10 ? "cifar10" : "cifar100";
  d.classes = classes;
  d.mean = kind == CifarKind::cifar10 ? kCifar10Mean : kCifar100Mean;
  d.stddev = kind == CifarKind::cifar10 ? kCifar10Std : kCifar100Std;
  d.images = Tensor<float>({n, 3, kCifarHw, kCifarHw});
  d.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t* rec = bytes.data() + i * record;
    // CIFAR-100 stores <coarse><fine>; the fine label is the class.
    const uint8_t label = rec[label_bytes - 1];
    if (label >= classes) {
      throw FormatError("label " + std::to_string(label) + " out of range at record " +
                        std::to_string(i) + " (byte offset " + std::to_string(i * record) + ")");
    }
    d.labels[static_cast<size_t>(i)] = label;
    const uint8_t* px = rec + label_bytes;
    float* dst = d.images.data() + i * kCifarPixels;
    for (int64_t j = 0; j < kCifarPixels; ++j) dst[j] = static_cast<float>(px[j]) / 255.0f;
  }
  return d;
}

void write_cifar10_style(const Dataset& d, const std::string& path) {
  if (d.size() < 1) throw UsageError("cannot write an empty dataset");
  if (d.classes > 256) throw UsageError("labels do not fit a single byte");
  const int64_t pixels = d.images.numel() / d.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  std::vector<uint8_t> rec(static_cast<size_t>(1 + pixels));
  for (int64_t i = 0; i < d.size(); ++i) {
    rec[0] = static_cast<uint8_t>(d.labels[static_cast<size_t>(i)]);
    const float* src = d.images.data() + i * pixels;
    for (int64_t j = 0; j < pixels; ++j) {
      const float v = std::round(src[j] * 255.0f);
      rec[static_cast<size_t>(1 + j)] =
          static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
    }
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw FormatError("short write to '" + path + "'");
}

namespace {

struct ShapeGeom {
  // Pixel-space test for membership in the drawn figure.
  int cls;
  double x0, y0, x1, y1;   // bounding box (rect/ellipse) or triangle extents
  double apex_x;           // triangle apex
  bool contains(double x, double y) const {
    switch (cls) {
      case 0:  // rectangle
        return x >= x0 && x <= x1 && y >= y0 && y <= y1;
      case 1: {  // triangle: base at y1, apex at (apex_x, y0)
        if (y < y0 || y > y1) return false;
        const double t = (y - y0) / std::max(y1 - y0, 1e-9);  // 0 at apex, 1 at base
        const double left = apex_x + (x0 - apex_x) * t;
        const double right = apex_x + (x1 - apex_x) * t;
        return x >= left && x <= right;
      }
      default: {  // ellipse
        const double cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
        const double a = (x1 - x0) / 2, b = (y1 - y0) / 2;
        const double dx = (x - cx) / a, dy = (y - cy) / b;
        return dx * dx + dy * dy <= 1.0;
      }
    }
  }
};

}  // namespace

Dataset gen_shapes(uint64_t seed, int64_t n, int64_t classes, int64_t hw) {
  if (classes < 2 || classes > 3) throw UsageError("shapes generator supports 2 or 3 classes");
  if (n < classes) throw UsageError("need at least one sample per class");
  if (hw < 16) throw UsageError("shapes images must be at least 16x16");

  Dataset d;
  d.name = "shapes";
  d.classes = classes;
  d.mean = {0.5f, 0.5f, 0.5f};
  d.stddev = {0.25f, 0.25f, 0.25f};
  d.images = Tensor<float>({n, 3, hw, hw});
  d.labels.resize(static_cast<size_t>(n));

  Rng rng(seed);
  const double scale = static_cast<double>(hw) / 32.0;
  for (int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % classes);
    d.labels[static_cast<size_t>(i)] = cls;

    double bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(0.2, 0.8);
    // Redraw until the figure is clearly separated from the background.
    double dist = 0;
    do {
      dist = 0;
      for (int c = 0; c < 3; ++c) {
        fg[c] = rng.uniform(0.05, 0.95);
        dist += std::abs(fg[c] - bg[c]);
      }
    } while (dist < 1.2);

    ShapeGeom geom{};
    geom.cls = cls;
    const double w = rng.uniform(12.0, 24.0) * scale;
    const double h = rng.uniform(12.0, 24.0) * scale;
    geom.x0 = rng.uniform(1.0, hw - 2.0 - w);
    geom.y0 = rng.uniform(1.0, hw - 2.0 - h);
    geom.x1 = geom.x0 + w;
    geom.y1 = geom.y0 + h;
    geom.apex_x = geom.x0 + w * rng.uniform(0.3, 0.7);

    float* img = d.images.data() + i * 3 * hw * hw;
    for (int64_t y = 0; y < hw; ++y) {
      for (int64_t x = 0; x < hw; ++x) {
        const bool inside =
            geom.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        for (int c = 0; c < 3; ++c) {
          const double base = inside ? fg[c] : bg[c];
          const double v = base + rng.normal() * 0.03;
          img[c * hw * hw + y * hw + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return d;
}

Augment parse_augment(const std::string& s) {
  if (s == "none") return Augment::none;
  if (s == "flip") return Augment::flip;
  if (s == "crop") return Augment::crop;
  if (s == "flip-crop" || s == "flip_crop" || s == "both") return Augment::flip_crop;
  throw UsageError("unknown augmentation '" + s + "' (expected none|flip|crop|flip-crop)");
}

const char* augment_name(Augment a) {
  switch (a) {
    case Augment::none: return "none";
    case Augment::flip: return "flip";
    case Augment::crop: return "crop";
    case Augment::flip_crop: return "flip-crop";
  }
  return "?";
}

BatchIterator::BatchIterator(const Dataset& data, int64_t batch_size, uint64_t shuffle_seed,
                             int64_t epoch, Augment augment, bool shuffle)
    : data_(data),
      batch_size_(batch_size),
      augment_(augment),
      rng_(shuffle_seed ^ (static_cast<uint64_t>(epoch) * 0x9e3779b97f4a7c15ull)) {
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  order_.resize(static_cast<size_t>(data.size()));
  for (int64_t i = 0; i < data.size(); ++i) order_[static_cast<size_t>(i)] = i;
  if (shuffle) {
    for (int64_t i = data.size() - 1; i > 0; --i) {
      const int64_t j = rng_.uniform_int(0, i);
      std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
    }
  }
}

int64_t BatchIterator::num_batches() const {
  return (data_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<LabeledBatch> BatchIterator::next() {
  const int64_t n = data_.size();
  if (cursor_ >= n) return std::nullopt;
  const int64_t take = std::min(batch_size_, n - cursor_);
  const int64_t hw = data_.hw();
  const int64_t plane = hw * hw;
  const int64_t sample = 3 * plane;

  LabeledBatch batch;
  batch.images = Tensor<float>({take, 3, hw, hw});
  batch.labels.resize(static_cast<size_t>(take));

  const bool do_flip = augment_ == Augment::flip || augment_ == Augment::flip_crop;
  const bool do_crop = augment_ == Augment::crop || augment_ == Augment::flip_crop;
  constexpr int64_t kPad = 4;

  std::vector<float> work(static_cast<size_t>(sample));
  for (int64_t b = 0; b < take; ++b) {
    const int64_t idx = order_[static_cast<size_t>(cursor_ + b)];
    batch.labels[static_cast<size_t>(b)] = data_.labels[static_cast<size_t>(idx)];
    const float* src = data_.images.data() + idx * sample;
    std::copy(src, src + sample, work.begin());

    if (do_flip && rng_.bernoulli(0.5)) {
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < hw; ++y) {
          float* row = work.data() + c * plane + y * hw;
          std::reverse(row, row + hw);
        }
    }
    if (do_crop) {
      // Zero-pad by 4 on each side, then crop back at a random offset.
      const int64_t dy = rng_.uniform_int(0, 2 * kPad);
      const int64_t dx = rng_.uniform_int(0, 2 * kPad);
      std::vector<float> cropped(static_cast<size_t>(sample), 0.0f);
      for (int64_t c = 0; c < 3; ++c) {
        for (int64_t y = 0; y < hw; ++y) {
          const int64_t sy = y + dy - kPad;
          if (sy < 0 || sy >= hw) continue;
          for (int64_t x = 0; x < hw; ++x) {
            const int64_t sx = x + dx - kPad;
            if (sx < 0 || sx >= hw) continue;
            cropped[static_cast<size_t>(c * plane + y * hw + x)] =
                work[static_cast<size_t>(c * plane + sy * hw + sx)];
          }
        }
      }
      work.swap(cropped);
    }

    float* dst = batch.images.data() + b * sample;
    for (int64_t c = 0; c < 3; ++c) {
      const float m = data_.mean[static_cast<size_t>(c)];
      const float s = data_.stddev[static_cast<size_t>(c)];
      for (int64_t j = 0; j < plane; ++j) {
        dst[c * plane + j] = (work[static_cast<size_t>(c * plane + j)] - m) / s;
      }
    }
  }
  cursor_ += take;
  return batch;
}

BatchIterator batches(const Dataset& data, int64_t batch_size, uint64_t shuffle_seed,
                      int64_t epoch, Augment augment, bool shuffle) {
  return BatchIterator(data, batch_size, shuffle_seed, epoch, augment, shuffle);
}

}  // namespace awconv
