#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "promptforge/affine_warp.hpp"
#include "reference.hpp"

using namespace promptforge;

namespace {

AffineRaw random_raw(RngStream& rng) {
  AffineRaw r;
  for (auto& v : r.v) v = rng.uniform(-1.5, 1.5);
  r[kSx] = rng.uniform(0.3, 2.0);  // keeps the scale well away from 0
  r[kSy] = rng.uniform(0.3, 2.0);
  return r;
}

std::array<double, 6> as_rows(const Affine3& a) { return {a.m[0], a.m[1], a.m[2], a.m[3], a.m[4], a.m[5]}; }

ref::Planes to_planes(const Image& img) { return ref::Planes(img.data.begin(), img.data.end()); }

}  // namespace

TEST_CASE("constraints at known points") {
  const auto c = constrain_affine(AffineRaw{}).value;
  CHECK(c.tx == 0.0);
  CHECK(c.ty == 0.0);
  CHECK(c.theta == 0.0);
  CHECK(c.shx == 0.0);
  CHECK(c.shy == 0.0);
  CHECK(c.sx == 0.5);
  CHECK(c.sy == 0.5);

  AffineRaw big;
  for (auto& v : big.v) v = 1e6;
  const auto s = constrain_affine(big).value;
  CHECK(std::abs(s.theta - 0.1) < 1e-7);
  CHECK(std::abs(s.tx - 0.05) < 1e-7);
  CHECK(std::abs(s.shy - 0.1) < 1e-7);
  for (auto& v : big.v) v = -1e6;
  const auto n = constrain_affine(big).value;
  CHECK(std::abs(n.theta + 0.1) < 1e-7);
  CHECK(std::abs(n.ty + 0.05) < 1e-7);
  CHECK(std::abs(n.shx + 0.1) < 1e-7);

  AffineRaw init;
  init[kSx] = init[kSy] = std::log(0.73 / 0.27);
  CHECK(std::abs(init[kSx] - 0.9946) < 1e-4);
  CHECK(std::abs(constrain_affine(init).value.sx - 0.73) < 1e-12);
}

TEST_CASE("constraint ranges hold for any raw input") {
  RngStream rng(5);
  const AffineRanges r{0.05, 0.1, 0.1};
  for (int trial = 0; trial < 2000; ++trial) {
    AffineRaw raw;
    const double scale = trial % 2 ? 1e9 : 30.0;
    for (auto& v : raw.v) v = rng.uniform(-scale, scale);
    const auto c = constrain_affine(raw, r).value;
    CHECK(std::abs(c.tx) <= r.t);
    CHECK(std::abs(c.ty) <= r.t);
    CHECK(std::abs(c.theta) <= r.theta);
    CHECK(std::abs(c.shx) <= r.sh);
    CHECK(std::abs(c.shy) <= r.sh);
    // Strictly inside (0, 1) while exp does not underflow; at |raw| = 1e9
    // double sigmoid rounds to the closed interval.
    if (scale < 100) {
      CHECK((c.sx > 0.0 && c.sx < 1.0));
    } else {
      CHECK((c.sx >= 0.0 && c.sx <= 1.0));
    }
  }
}

TEST_CASE("non-finite raw parameters are rejected") {
  AffineRaw raw;
  raw[kTheta] = std::nan("");
  CHECK_THROWS_AS(constrain_affine(raw), Error);
}

TEST_CASE("squashing jacobian matches finite differences") {
  RngStream rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    AffineRaw raw = random_raw(rng);
    const auto c = constrain_affine(raw);
    for (std::size_t k = 0; k < 7; ++k) {
      auto value_of = [&](const AffineRaw& r) {
        const auto v = constrain_affine(r).value;
        const double all[7] = {v.tx, v.ty, v.theta, v.sx, v.sy, v.shx, v.shy};
        return all[k];
      };
      AffineRaw up = raw, down = raw;
      up[k] += 1e-6;
      down[k] -= 1e-6;
      const double fd = (value_of(up) - value_of(down)) / 2e-6;
      CHECK(ref::relative_error(c.jacobian[k], fd) < 1e-6);
    }
  }
}

TEST_CASE("matrix follows the printed formula") {
  AffineConstrained c;
  c.sx = c.sy = 0.6;
  c.theta = c.shx = c.shy = c.tx = c.ty = 0;
  const Affine3 a = build_matrix(c);
  CHECK(a.m == std::array<double, 9>{0.6, 0, 0, 0, 0.6, 0, 0, 0, 1});

  AffineRaw sat;
  sat[kTheta] = 1e6;
  sat[kSx] = sat[kSy] = std::log(0.999999 / 0.000001);
  const Affine3 rot = build_matrix(constrain_affine(sat).value);
  CHECK(std::abs(rot(0, 0) - std::cos(0.1)) < 1e-5);
  CHECK(std::abs(rot(0, 1) + std::sin(0.1)) < 1e-5);
  CHECK(std::abs(rot(1, 0) - std::sin(0.1)) < 1e-5);
  CHECK(std::abs(rot(1, 1) - std::cos(0.1)) < 1e-5);

  RngStream rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const AffineRaw raw = random_raw(rng);
    const auto got = as_rows(build_matrix(constrain_affine(raw).value));
    const auto want = ref::matrix(ref::constrain(raw.v, 0.05, 0.1, 0.1));
    for (int k = 0; k < 6; ++k) CHECK(std::abs(got[std::size_t(k)] - want[std::size_t(k)]) < 1e-7);
    CHECK(build_matrix(constrain_affine(raw).value).m[8] == 1.0);
  }
}

TEST_CASE("identity warp is exact") {
  RngStream rng(1);
  const Image img = testutil::random_image(13, 17, rng);
  const auto r = warp_bilinear(img, Affine3::identity());
  CHECK(r.image.data == img.data);
  Image fast;
  warp_apply(img, Affine3::identity(), fast);
  CHECK(fast.data == img.data);
}

TEST_CASE("translation moves content toward +x") {
  RngStream rng(2);
  const Image img = testutil::random_image(16, 16, rng);
  Affine3 a;
  a.m[2] = 0.25;  // 2 px on a 16 px canvas
  const Image out = warp_bilinear(img, a).image;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(out.at(c, y, x) == (x >= 2 ? img.at(c, y, x - 2) : 0.0f));
}

TEST_CASE("half scale keeps a centered square") {
  const Image ones(224, 224, 1.0f);
  const Image out = warp_bilinear(ones, Affine3::scaling(0.5, 0.5)).image;
  CHECK(out.at(0, 112, 112) == 1.0f);
  CHECK(out.at(0, 0, 0) == 0.0f);
  CHECK(out.at(1, 56, 56) == 1.0f);  // inner corner of the 112 region
  CHECK(out.at(1, 54, 54) == 0.0f);
  std::size_t full = 0, nonzero = 0;
  for (std::size_t p = 0; p < out.plane(); ++p) {
    full += out.data[p] == 1.0f;
    nonzero += out.data[p] != 0.0f;
  }
  CHECK(full >= 110u * 110u);
  CHECK(nonzero <= 114u * 114u);
}

TEST_CASE("initial resize empties about 46 percent of the canvas") {
  const Image ones(224, 224, 1.0f);
  const double s = 164.0 / 224.0;
  const Image out = warp_bilinear(ones, Affine3::scaling(s, s)).image;
  std::size_t zeros = 0;
  for (std::size_t p = 0; p < out.plane(); ++p)
    zeros += out.data[p] == 0.0f && out.data[out.plane() + p] == 0.0f && out.data[2 * out.plane() + p] == 0.0f;
  const double frac = double(zeros) / double(out.plane());
  CHECK(std::abs(frac - (1.0 - s * s)) < 0.01);
}

TEST_CASE("singular matrices are refused") {
  const Image img(8, 8, 0.5f);
  try {
    warp_bilinear(img, Affine3::scaling(1e-4, 1e-4));
    FAIL("expected AffineSingular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AffineSingular);
  }
}

TEST_CASE("bilinear weights sum to one in bounds") {
  RngStream rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testutil::random_image(20, 24, rng);
    const Affine3 a = build_matrix(constrain_affine(random_raw(rng)).value);
    const auto r = warp_bilinear(img, a);
    for (std::size_t p = 0; p < r.tape.pixels(); ++p) {
      if (!r.tape.in_bounds[p]) continue;
      const auto& w = r.tape.weights[p];
      CHECK(std::abs(double(w[0]) + w[1] + w[2] + w[3] - 1.0) < 1e-6);
      for (float v : w) CHECK(v >= 0.0f);
    }
  }
}

TEST_CASE("warp is linear in the image") {
  RngStream rng(6);
  const Image x = testutil::random_image(16, 16, rng), y = testutil::random_image(16, 16, rng);
  const Affine3 a = build_matrix(constrain_affine(random_raw(rng)).value);
  Image mix(16, 16);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = 0.3f * x.data[i] - 1.7f * y.data[i];
  const Image wx = warp_bilinear(x, a).image, wy = warp_bilinear(y, a).image, wm = warp_bilinear(mix, a).image;
  for (std::size_t i = 0; i < mix.size(); ++i) CHECK(std::abs(wm.data[i] - (0.3f * wx.data[i] - 1.7f * wy.data[i])) < 1e-5);
}

TEST_CASE("warp agrees with the reference sampler") {
  RngStream rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testutil::random_image(15, 19, rng);
    const AffineRaw raw = random_raw(rng);
    const auto m = ref::matrix(ref::constrain(raw.v, 0.05, 0.1, 0.1));
    const auto want = ref::warp(to_planes(img), 15, 19, m, ref::cells_for(m, 15, 19));
    const auto got = warp_bilinear(img, build_matrix(constrain_affine(raw).value)).image;
    Image fast;
    warp_apply(img, build_matrix(constrain_affine(raw).value), fast);
    CHECK(fast.data == got.data);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got.data[i] - want[i]) < 1e-5);
  }
}

TEST_CASE("warp backward trivial cases") {
  RngStream rng(10);
  const Image img = testutil::random_image(12, 12, rng);
  const auto c = constrain_affine(random_raw(rng));
  const auto r = warp_bilinear(img, build_matrix(c.value));
  const auto zero = warp_backward(r.tape, Image(12, 12), &c);
  for (float v : zero.image.data) CHECK(v == 0.0f);
  for (double v : zero.raw) CHECK(v == 0.0);

  const auto id = warp_bilinear(img, Affine3::identity());
  const Image g = testutil::random_image(12, 12, rng, -1, 1);
  CHECK(warp_backward(id.tape, g, nullptr).image.data == g.data);

  CHECK_THROWS_AS(warp_backward(r.tape, Image(11, 12), &c), Error);
}

TEST_CASE("warp gradients match finite differences") {
  RngStream rng(12);
  const int h = 16, w = 16;
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testutil::random_image(h, w, rng);
    const AffineRaw raw = random_raw(rng);
    const Image weights = testutil::random_image(h, w, rng, -1, 1);  // loss = sum(weights * out)
    const auto c = constrain_affine(raw);
    const auto fwd = warp_bilinear(img, build_matrix(c.value));
    const auto grads = warp_backward(fwd.tape, weights, &c);

    auto m_of = [&](const std::array<double, 7>& r) { return ref::matrix(ref::constrain(r, 0.05, 0.1, 0.1)); };
    std::array<double, 7> rr = raw.v;
    const auto cells = ref::cells_for(m_of(rr), h, w);
    ref::Planes x = to_planes(img);
    auto loss = [&] {
      const auto out = ref::warp(x, h, w, m_of(rr), cells);
      double s = 0;
      for (std::size_t i = 0; i < out.size(); ++i) s += weights.data[i] * out[i];
      return s;
    };
    for (std::size_t k = 0; k < 7; ++k) {
      const double fd = ref::central_difference(rr[k], 1e-3, loss);
      CHECK_MESSAGE(ref::relative_error(grads.raw[k], fd) <= 1e-3, "trial ", trial, " raw ", k, ": ", grads.raw[k],
                    " vs ", fd);
    }
    for (int s = 0; s < 100; ++s) {
      const std::size_t i = std::size_t(rng.uniform_int(x.size()));
      const double fd = ref::central_difference(x[i], 1e-3, loss);
      CHECK(ref::relative_error(grads.image.data[i], fd) <= 1e-3);
    }
  }
}
