#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <functional>
#include <fstream>

#include "helpers.hpp"
#include "promptforge/tensorfile.hpp"

using namespace promptforge;

namespace {

std::vector<std::uint64_t> draws(RngStream r, int n) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(r.next_u64());
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

}  // namespace

TEST_CASE("rng derivation is deterministic and label sensitive") {
  const RngStream s7(7), s8(8);
  CHECK(draws(rng_derive(s7, "aug"), 64) == draws(rng_derive(s7, "aug"), 64));
  CHECK(draws(rng_derive(s7, "aug"), 64) != draws(rng_derive(s7, "init"), 64));
  CHECK(draws(rng_derive(s7, "aug"), 64) != draws(rng_derive(s8, "aug"), 64));
  CHECK(draws(s7.derive(std::uint64_t(1)), 8) != draws(s7.derive(std::uint64_t(2)), 8));
}

TEST_CASE("rng draws are pinned across platforms") {
  // Expected values from an independent splitmix64 evaluation of
  // key = mix(seed ^ mix(stream + golden)), draw_k = mix(key + k * golden).
  RngStream r(0, 0);
  CHECK(r.next_u64() == 0x568a9b0b1a2c05ecull);
  CHECK(r.next_u64() == 0x44e5b8b147ef718bull);
  CHECK(r.counter() == 2);
  // FNV-1a 64 reference vectors.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("rng distributions stay in range") {
  RngStream r(3);
  double mean = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const auto k = r.uniform_int(7);
    CHECK(k < 7);
    const double z = r.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("image and mask invariants") {
  Image img(4, 5, 0.25f);
  CHECK(img.size() == 3u * 4 * 5);
  CHECK(img.all_finite());
  img.data[7] = std::nanf("");
  CHECK_FALSE(img.all_finite());
  CHECK_THROWS_AS(Image(0, 3), Error);
  Mask m(2, 2);
  m.data[0] = 1;
  CHECK(m.fraction() == doctest::Approx(0.25));
}

TEST_CASE("tensorfile round trip is bit exact") {
  RngStream rng(11);
  TensorEntry zeros{"zeros", {3, 4, 4}, std::vector<float>(48, 0.0f)};
  TensorEntry rnd{"random", {2, 5}, {}};
  for (int i = 0; i < 10; ++i) rnd.values.push_back(float(rng.normal()));
  rnd.values[3] = -0.0f;
  const auto dir = testutil::scratch("tensorfile");
  tensorfile_write(dir / "t.acvp", {zeros, rnd});
  const auto back = tensorfile_read(dir / "t.acvp");
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "zeros");
  CHECK(back[0].dims == zeros.dims);
  CHECK(std::memcmp(back[1].values.data(), rnd.values.data(), rnd.values.size() * 4) == 0);
  CHECK(tensorfile_encode(back) == tensorfile_encode({zeros, rnd}));
}

TEST_CASE("tensorfile header is little endian ACVP v1") {
  const auto bytes = tensorfile_encode({{"a", {1}, {1.0f}}});
  REQUIRE(bytes.size() >= 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ACVP");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 1);  // entry count
  // 1.0f = 0x3f800000 stored little endian at the tail.
  CHECK(bytes[bytes.size() - 1] == 0x3f);
  CHECK(bytes[bytes.size() - 2] == 0x80);
}

TEST_CASE("tensorfile rejects malformed input") {
  auto good = tensorfile_encode({{"a", {2}, {1.0f, 2.0f}}});
  auto bad_magic = good;
  std::memcpy(bad_magic.data(), "XXXX", 4);
  CHECK(code_of([&] { tensorfile_decode(bad_magic); }) == ErrorCode::BadMagic);
  auto bad_version = good;
  bad_version[4] = 9;
  CHECK(code_of([&] { tensorfile_decode(bad_version); }) == ErrorCode::VersionMismatch);
  auto truncated = good;
  truncated.pop_back();
  CHECK(code_of([&] { tensorfile_decode(truncated); }) == ErrorCode::TruncatedPayload);
  CHECK(code_of([&] { tensorfile_encode({{"a", {1}, {1.0f}}, {"a", {1}, {2.0f}}}); }) == ErrorCode::DuplicateName);
  auto dup = tensorfile_encode({{"a", {1}, {1.0f}}, {"b", {1}, {2.0f}}});
  // Rename the second entry to collide with the first on the wire.
  for (std::size_t i = 12; i < dup.size(); ++i)
    if (dup[i] == 'b') dup[i] = 'a';
  CHECK(code_of([&] { tensorfile_decode(dup); }) == ErrorCode::DuplicateName);
  CHECK(code_of([&] { tensorfile_encode({{"a", {3}, {1.0f}}}); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("tensorfile read reports missing files") {
  CHECK(code_of([] { tensorfile_read("/nonexistent/dir/x.acvp"); }) == ErrorCode::IoError);
}
