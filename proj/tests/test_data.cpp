#include <cstdio>
#include <fstream>
#include <vector>

#include "awconv/data.hpp"
#include "awconv/nn_ops.hpp"
#include "awconv/train.hpp"
#include "doctest.h"

using namespace awconv;

namespace {

std::string temp_path(const char* name) {
  return std::string("/tmp/awconv_test_") + name;
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cifar10 fixture decodes byte-exactly and re-encodes losslessly") {
  // Two hand-crafted records: known label bytes and a pixel ramp.
  std::vector<uint8_t> bytes;
  bytes.push_back(3);
  for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<uint8_t>((i * 7 + 11) % 256));
  bytes.push_back(0);
  for (int i = 0; i < 3072; ++i) bytes.push_back(0);
  const std::string path = temp_path("cifar_fixture.bin");
  write_bytes(path, bytes);

  Dataset d = read_cifar(path, CifarKind::cifar10);
  REQUIRE(d.size() == 2);
  CHECK(d.classes == 10);
  CHECK(d.labels[0] == 3);
  CHECK(d.labels[1] == 0);
  CHECK(d.images.at({0, 0, 0, 0}) == doctest::Approx(11.0f / 255.0f));
  // Pixel 3071 of record 0 sits at channel 2, row 31, col 31.
  CHECK(d.images.at({0, 2, 31, 31}) == doctest::Approx(((3071 * 7 + 11) % 256) / 255.0f));
  for (int64_t i = 0; i < 3072; ++i) CHECK(d.images[3072 + i] == 0.0f);

  const std::string out = temp_path("cifar_reencode.bin");
  write_cifar10_style(d, out);
  CHECK(read_bytes(out) == bytes);
}

TEST_CASE("cifar100 uses the fine label") {
  std::vector<uint8_t> bytes;
  bytes.push_back(17);  // coarse
  bytes.push_back(42);  // fine
  for (int i = 0; i < 3072; ++i) bytes.push_back(0);
  const std::string path = temp_path("cifar100_fixture.bin");
  write_bytes(path, bytes);
  Dataset d = read_cifar(path, CifarKind::cifar100);
  CHECK(d.classes == 100);
  CHECK(d.labels[0] == 42);
}

TEST_CASE("cifar reader rejects malformed files") {
  std::vector<uint8_t> bytes(3073 * 2 + 1, 0);
  const std::string path = temp_path("cifar_truncated.bin");
  write_bytes(path, bytes);
  CHECK_THROWS_AS(read_cifar(path, CifarKind::cifar10), FormatError);

  std::vector<uint8_t> bad_label(3073, 0);
  bad_label[0] = 10;  // out of range for 10 classes
  const std::string path2 = temp_path("cifar_badlabel.bin");
  write_bytes(path2, bad_label);
  CHECK_THROWS_AS(read_cifar(path2, CifarKind::cifar10), FormatError);

  CHECK_THROWS_AS(read_cifar(temp_path("missing_file.bin"), CifarKind::cifar10), FormatError);
}

TEST_CASE("shapes generator is deterministic, balanced, and in range") {
  Dataset a = gen_shapes(123, 300);
  Dataset b = gen_shapes(123, 300);
  CHECK(bitwise_equal(a.images, b.images));
  CHECK(a.labels == b.labels);

  int hist[3] = {0, 0, 0};
  for (int32_t label : a.labels) ++hist[label];
  CHECK(hist[0] == 100);
  CHECK(hist[1] == 100);
  CHECK(hist[2] == 100);

  for (int64_t i = 0; i < a.images.numel(); ++i) {
    CHECK(a.images[i] >= 0.0f);
    CHECK(a.images[i] <= 1.0f);
  }

  Dataset c = gen_shapes(124, 30);
  CHECK_FALSE(bitwise_equal(a.images.reshape({300 * 3 * 32 * 32}),
                            a.images.reshape({300 * 3 * 32 * 32})) == false);
  CHECK(c.size() == 30);
  CHECK_THROWS_AS(gen_shapes(0, 2, 3, 32), UsageError);
  CHECK_THROWS_AS(gen_shapes(0, 10, 5, 32), UsageError);
}

TEST_CASE("batch iterator sizes, determinism, and normalization") {
  Dataset d = gen_shapes(9, 10);
  BatchIterator it = batches(d, 4, 0, 0, Augment::none, false);
  std::vector<int64_t> sizes;
  while (auto b = it.next()) sizes.push_back(b->size());
  CHECK(sizes == std::vector<int64_t>{4, 4, 2});

  // Same seed, same order; batches carry normalized pixels.
  BatchIterator s1 = batches(d, 4, 77, 2, Augment::none, true);
  BatchIterator s2 = batches(d, 4, 77, 2, Augment::none, true);
  auto b1 = s1.next();
  auto b2 = s2.next();
  REQUIRE(b1.has_value());
  REQUIRE(b2.has_value());
  CHECK(bitwise_equal(b1->images, b2->images));
  CHECK(b1->labels == b2->labels);

  BatchIterator plain = batches(d, 10, 0, 0, Augment::none, false);
  auto all = plain.next();
  for (int64_t i = 0; i < 10; ++i) {
    const float raw = d.images[i * 3072];
    CHECK(all->images[i * 3072] == doctest::Approx((raw - 0.5f) / 0.25f));
  }
}

TEST_CASE("flip augmentation either mirrors or preserves each image") {
  Dataset d = gen_shapes(10, 6);
  BatchIterator it = batches(d, 6, 5, 0, Augment::flip, false);
  auto batch = it.next();
  REQUIRE(batch.has_value());
  const int64_t hw = 32, plane = hw * hw, sample = 3 * plane;
  for (int64_t b = 0; b < 6; ++b) {
    bool same = true, mirrored = true;
    for (int64_t c = 0; c < 3 && (same || mirrored); ++c) {
      for (int64_t y = 0; y < hw; ++y) {
        for (int64_t x = 0; x < hw; ++x) {
          const float raw = d.images[b * sample + c * plane + y * hw + x];
          const float norm = (raw - 0.5f) / 0.25f;
          const float got = batch->images[b * sample + c * plane + y * hw + x];
          const float got_mirror = batch->images[b * sample + c * plane + y * hw + (hw - 1 - x)];
          if (got != norm) same = false;
          if (got_mirror != norm) mirrored = false;
        }
      }
    }
    CHECK((same || mirrored));
  }
}

TEST_CASE("crop augmentation is a shifted zero-padded window") {
  Dataset d = gen_shapes(11, 3);
  BatchIterator it = batches(d, 3, 6, 0, Augment::crop, false);
  auto batch = it.next();
  REQUIRE(batch.has_value());
  const int64_t hw = 32, plane = hw * hw, sample = 3 * plane;
  const float pad_value = (0.0f - 0.5f) / 0.25f;  // zero pixels, then normalized
  for (int64_t b = 0; b < 3; ++b) {
    bool matched = false;
    for (int64_t dy = 0; dy <= 8 && !matched; ++dy) {
      for (int64_t dx = 0; dx <= 8 && !matched; ++dx) {
        bool ok = true;
        for (int64_t c = 0; c < 3 && ok; ++c)
          for (int64_t y = 0; y < hw && ok; ++y)
            for (int64_t x = 0; x < hw && ok; ++x) {
              const int64_t sy = y + dy - 4, sx = x + dx - 4;
              const float want =
                  (sy < 0 || sy >= hw || sx < 0 || sx >= hw)
                      ? pad_value
                      : (d.images[b * sample + c * plane + sy * hw + sx] - 0.5f) / 0.25f;
              if (batch->images[b * sample + c * plane + y * hw + x] != want) ok = false;
            }
        matched = ok;
      }
    }
    CHECK(matched);
  }
}

TEST_CASE("a linear probe cannot solve the shapes task") {
  Dataset train = gen_shapes(7, 600);
  Dataset val = gen_shapes(7 + 0x517cc1b727220a95ull, 300);

  Tensor<float> w({3, 3072});
  Tensor<float> b({3});
  Tensor<float> vw = Tensor<float>::zeros({3, 3072});
  Tensor<float> vb = Tensor<float>::zeros({3});
  for (int64_t epoch = 0; epoch < 10; ++epoch) {
    BatchIterator it = batches(train, 50, 1, epoch, Augment::none, true);
    while (auto batch = it.next()) {
      Tape<float> tape;
      Node<float> wn = tape.leaf(w, true);
      Node<float> bn = tape.leaf(b, true);
      Node<float> x = ad::constant(tape, batch->images.reshape({batch->size(), 3072}));
      Node<float> loss = nn::softmax_cross_entropy(nn::linear(x, wn, bn), batch->labels);
      tape.backward(loss);
      sgd_update(w, wn.grad(), vw, 0.01f, 0.9f, 0.0f);
      sgd_update(b, bn.grad(), vb, 0.01f, 0.9f, 0.0f);
    }
  }
  int64_t correct = 0;
  BatchIterator it = batches(val, 50, 0, 0, Augment::none, false);
  while (auto batch = it.next()) {
    Tensor<float> logits = nn::linear(batch->images.reshape({batch->size(), 3072}), w, &b);
    for (int64_t l = 0; l < batch->size(); ++l) {
      int best = 0;
      for (int j = 1; j < 3; ++j) {
        if (logits[l * 3 + j] > logits[l * 3 + best]) best = j;
      }
      if (best == batch->labels[static_cast<size_t>(l)]) ++correct;
    }
  }
  const double acc = static_cast<double>(correct) / 300.0;
  INFO("linear probe accuracy: ", acc);
  CHECK(acc < 0.60);
}
