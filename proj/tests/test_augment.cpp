#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "promptforge/augment.hpp"

using namespace promptforge;

namespace {

double l2(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a.data[i]) - b.data[i]) * (double(a.data[i]) - b.data[i]);
  return std::sqrt(s);
}

double mean(const Image& a) {
  double s = 0;
  for (float v : a.data) s += v;
  return s / double(a.size());
}

}  // namespace

TEST_CASE("augmentation ops") {
  RngStream rng(1);
  const Image x = testutil::random_image(32, 32, rng);
  CHECK(apply_aug_op(x, {AugKind::Identity, 17}, rng).data == x.data);
  for (AugKind k : {AugKind::Brightness, AugKind::Contrast, AugKind::Sharpness, AugKind::Rotate,
                    AugKind::TranslateX, AugKind::ShearY})
    CHECK(testutil::max_abs_diff(apply_aug_op(x, {k, 0}, rng), x) <= 1e-6);

  for (int k = 0; k < kAugKinds; ++k)
    for (int bin : {0, 15, 30}) {
      const Image out = apply_aug_op(x, {AugKind(k), bin}, rng);
      CHECK(out.same_shape(x));
      for (float v : out.data) CHECK((v >= 0.0f && v <= 1.0f));
    }
  CHECK_THROWS_AS(apply_aug_op(x, {AugKind::Rotate, 31}, rng), Error);
  CHECK_THROWS_AS(apply_aug_op(x, {AugKind::Rotate, -1}, rng), Error);
}

TEST_CASE("trivial augment is seeded") {
  RngStream src(2);
  const Image x = testutil::random_image(24, 24, src);
  const RngStream base = RngStream(3).derive("aug");
  RngStream a = base, b = base;
  CHECK(trivial_augment(x, a).data == trivial_augment(x, b).data);

  std::array<int, kAugKinds> seen{};
  RngStream r(4);
  for (int i = 0; i < 2000; ++i) {
    const AugOp op = draw_aug_op(r);
    CHECK((op.bin >= 0 && op.bin < kMagnitudeBins));
    seen[std::size_t(op.kind)] += 1;
  }
  for (int c : seen) CHECK(c > 100);
  CHECK(aug_name(AugKind::Equalize) == "equalize");
}

TEST_CASE("corruption ladders") {
  RngStream src(5);
  const Image x = testutil::random_image(32, 32, src, 0.2, 0.8);
  RngStream r1(6), r5(6);
  const Image s1 = corrupt(x, {CorruptionKind::GaussianNoise, 1}, r1);
  const Image s5 = corrupt(x, {CorruptionKind::GaussianNoise, 5}, r5);
  CHECK(l2(s5, x) > l2(s1, x));

  const Image half(16, 16, 0.5f);
  for (int s = 1; s <= 5; ++s) {
    RngStream r(7);
    const Image b = corrupt(half, {CorruptionKind::Brightness, s}, r);
    CHECK(std::abs(mean(b) - 0.5 - CorruptionTables::brightness_shift[std::size_t(s - 1)]) < 1e-6);
  }

  const Image flat(64, 64, 0.37f);
  for (int s = 1; s <= 5; ++s) {
    RngStream r(8);
    CHECK(corrupt(flat, {CorruptionKind::Pixelate, s}, r).data == flat.data);
  }

  for (CorruptionKind k : all_corruptions()) {
    CHECK(parse_corruption(corruption_name(k)) == k);
    double prev = -1;
    for (int s = 1; s <= 5; ++s) {
      RngStream r(9);
      const Image c = corrupt(x, {k, s}, r);
      for (float v : c.data) CHECK((v >= 0.0f && v <= 1.0f));
      const double d = l2(c, x);
      if (k != CorruptionKind::GaussianNoise) CHECK(d >= prev);
      prev = d;
    }
  }
  RngStream r(10);
  CHECK_THROWS_AS(corrupt(x, {CorruptionKind::BoxBlur, 0}, r), Error);
  CHECK_THROWS_AS(corrupt(x, {CorruptionKind::BoxBlur, 6}, r), Error);
  CHECK_THROWS_AS(parse_corruption("fog"), Error);
}
