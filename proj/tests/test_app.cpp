#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "promptforge/app.hpp"
#include "promptforge/tensorfile.hpp"

using namespace promptforge;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// Fresh scratch directory under the system temp dir, one tree per process.
fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("promptforge-test-app-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small enough that each command runs in well under a second.
Config small(const fs::path& out) {
  Config c;
  c.load_text(R"(
    height = 32
    width = 32
    n_train = 96
    n_val = 32
    n_test = 48
    pretrain_epochs = 2
    epochs = 2
    batch_size = 16
    lr0 = 4
    bench_height = 48
    bench_width = 48
    bench_batch = 2
    bench_reps = 5
    bench_warmup = 0
    embed_images = 3
    embed_configs = 2
  )");
  c.set("out_dir", out.string());
  return c;
}

struct Ran {
  int code;
  std::string out, err;
};

Ran run(std::string_view cmd, const Config& c) {
  std::ostringstream out, err;
  const int code = run_command(cmd, c, out, err);
  return {code, out.str(), err.str()};
}

// One pretrained model shared by the command tests.
const fs::path& model_file() {
  static const fs::path p = [] {
    const fs::path out = scratch("model");
    const Ran r = run("pretrain", small(out));
    REQUIRE(r.code == kExitOk);
    return out / "pretrain-seed0" / "model.acvp";
  }();
  return p;
}

fs::path identity_vp(const fs::path& dir) {
  const Prompt p = make_prompt(Variant::Vp, 32, 32);
  const fs::path f = dir / "identity.acvp";
  const auto bytes = tensorfile_encode(prompt_to_entries(p));
  std::ofstream(f, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  return f;
}

}  // namespace

TEST_CASE("config keys validate type and reject unknown names") {
  Config c;
  CHECK(c.get("lr0") == "40");
  CHECK_FALSE(c.is_set("lr0"));
  c.set("lr0", " 2.5 ");
  CHECK(c.get_real("lr0") == 2.5);
  CHECK(c.is_set("lr0"));
  c.set("grad_normalize", "on");
  CHECK(c.get_bool("grad_normalize"));

  auto code_of = [&](std::string_view k, std::string_view v) {
    try {
      c.set(k, v);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Ok;
  };
  CHECK(code_of("learning_rate", "1") == ErrorCode::ConfigError);
  CHECK(code_of("epochs", "ten") == ErrorCode::ConfigError);
  CHECK(code_of("epochs", "1.5") == ErrorCode::ConfigError);
  CHECK(code_of("seed", "-1") == ErrorCode::ConfigError);
  CHECK(code_of("lr0", "inf") == ErrorCode::ConfigError);
  CHECK(code_of("variant", "clip") == ErrorCode::ConfigError);
  CHECK(code_of("grad_normalize", "maybe") == ErrorCode::ConfigError);
  CHECK(c.get("epochs") == "200");
}

TEST_CASE("config text skips comments and names the failing line") {
  Config c;
  c.load_text("# header\n\nseed = 7\n  # indented comment\nvariant=vp\n", "a.cfg");
  CHECK(c.get_uint("seed") == 7);
  CHECK(c.get("variant") == "vp");

  try {
    c.load_text("seed=1\n\nbogus=2\n", "b.cfg");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find("b.cfg:3") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(c.load_text("no equals sign\n"), Error);
  CHECK_THROWS_AS(c.load_file("/nonexistent/promptforge.cfg"), Error);
}

TEST_CASE("echo round trips through load_text") {
  Config a;
  a.set("seed", "11");
  a.set("lr0", "0.5");
  a.set("kinds", "gaussian-noise,fog");
  Config b;
  b.load_text(a.echo());
  CHECK(b.echo() == a.echo());
  CHECK(count_lines(a.echo()) == int(config_keys().size()));
}

TEST_CASE("seed falls back to the environment only when not given") {
  ::setenv("PROMPTFORGE_SEED", "42", 1);
  Config a;
  a.apply_env();
  CHECK(a.get_uint("seed") == 42);
  Config b;
  b.set("seed", "3");
  b.apply_env();
  CHECK(b.get_uint("seed") == 3);
  ::setenv("PROMPTFORGE_SEED", "x", 1);
  Config c;
  CHECK_THROWS_AS(c.apply_env(), Error);
  ::unsetenv("PROMPTFORGE_SEED");
  Config d;
  d.apply_env();
  CHECK(d.get_uint("seed") == 0);
}

TEST_CASE("git blob hash and ppm encoding") {
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");

  Image img(2, 3);
  img.at(0, 0, 0) = 1.0f;
  img.at(1, 0, 0) = 0.5f;
  img.at(2, 1, 2) = 7.0f;   // clamps high
  img.at(0, 1, 1) = -3.0f;  // clamps low
  const std::string p = encode_ppm(img);
  const std::string header = "P6\n3 2\n255\n";
  REQUIRE(p.size() == header.size() + 18);
  CHECK(p.substr(0, header.size()) == header);
  const auto px = [&](int y, int x, int c) { return static_cast<unsigned char>(p[header.size() + (y * 3 + x) * 3 + c]); };
  CHECK(px(0, 0, 0) == 255);
  CHECK(px(0, 0, 1) == 128);  // 127.5 rounds away from zero
  CHECK(px(1, 2, 2) == 255);
  CHECK(px(1, 1, 0) == 0);
}

TEST_CASE("train with zero epochs keeps the initial prompt") {
  const fs::path out = scratch("train0");
  Config c = small(out);
  c.set("model", model_file().string());
  c.set("epochs", "0");
  const Ran r = run("train", c);
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const fs::path dir = out / "train-seed0";
  CHECK(count_lines(slurp(dir / "metrics.csv")) == 2);  // header + epoch 0
  const Prompt p = load_prompt(dir / "prompt.acvp");
  const Prompt init = make_prompt(Variant::Acavp, 32, 32);
  CHECK(prompt_to_entries(p).size() == prompt_to_entries(init).size());
  CHECK(tensorfile_encode(prompt_to_entries(p)) == tensorfile_encode(prompt_to_entries(init)));
  const std::string summary = slurp(dir / "summary.csv");
  CHECK(summary.find("best_epoch,0\n") != std::string::npos);
  for (const char* f : {"config.txt", "manifest.txt"}) CHECK(fs::is_regular_file(dir / f));
}

TEST_CASE("train is byte-reproducible and replays from its config echo") {
  const fs::path a = scratch("rep-a"), b = scratch("rep-b"), c = scratch("rep-c");
  Config cfg = small(a);
  cfg.set("model", model_file().string());
  cfg.set("seed", "3");
  REQUIRE(run("train", cfg).code == kExitOk);
  cfg.set("out_dir", b.string());
  REQUIRE(run("train", cfg).code == kExitOk);

  const fs::path da = a / "train-seed3", db = b / "train-seed3";
  for (const char* f : {"metrics.csv", "summary.csv", "prompt.acvp"}) CHECK(slurp(da / f) == slurp(db / f));
  // Manifests differ only in the echoed out_dir.
  const std::string ma = slurp(da / "manifest.txt");
  CHECK(ma.find("output.metrics.csv=" + git_blob_hash(slurp(da / "metrics.csv"))) != std::string::npos);
  CHECK(ma.find("input.model=" + git_blob_hash(slurp(model_file()))) != std::string::npos);
  CHECK(ma.find("config=" + git_blob_hash(slurp(da / "config.txt"))) != std::string::npos);

  Config replay;
  replay.load_file(da / "config.txt");
  replay.set("out_dir", c.string());
  REQUIRE(run("train", replay).code == kExitOk);
  for (const char* f : {"metrics.csv", "summary.csv", "prompt.acvp"})
    CHECK(slurp(da / f) == slurp(c / "train-seed3" / f));
}

TEST_CASE("eval with an identity prompt matches eval without one") {
  const fs::path out = scratch("eval");
  Config c = small(out);
  c.set("model", model_file().string());
  REQUIRE(run("eval", c).code == kExitOk);
  const std::string bare = slurp(out / "eval-seed0" / "eval.csv");
  CHECK(count_lines(bare) == 1 + 4 + 1);
  CHECK(bare.rfind("class,n,accuracy\n", 0) == 0);
  CHECK(bare.find("\nall,48,") != std::string::npos);

  c.set("prompt", identity_vp(out).string());
  REQUIRE(run("eval", c).code == kExitOk);
  CHECK(slurp(out / "eval-seed0" / "eval.csv") == bare);

  c.set("workers", "3");
  REQUIRE(run("eval", c).code == kExitOk);
  CHECK(slurp(out / "eval-seed0" / "eval.csv") == bare);
}

TEST_CASE("corrupt writes five severities per kind and is reproducible") {
  const fs::path out = scratch("corrupt");
  Config c = small(out);
  c.set("model", model_file().string());
  c.set("kinds", "gaussian-noise, contrast");
  REQUIRE(run("corrupt", c).code == kExitOk);
  const std::string first = slurp(out / "corrupt-seed0" / "corruption.csv");
  CHECK(count_lines(first) == 1 + 10);
  CHECK(first.find("gaussian-noise,5,") != std::string::npos);
  REQUIRE(run("corrupt", c).code == kExitOk);
  CHECK(slurp(out / "corrupt-seed0" / "corruption.csv") == first);

  c.set("kinds", "sunburn");
  const Ran bad = run("corrupt", c);
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("sunburn") != std::string::npos);
}

TEST_CASE("bench reports all four variants") {
  const fs::path out = scratch("bench");
  Config c = small(out);
  const Ran r = run("bench", c);
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const std::string csv = slurp(out / "bench-seed0" / "bench.csv");
  CHECK(count_lines(csv) == 5);
  for (const char* v : {"\nvp,", "\nevp,", "\nautovp,", "\nacavp,"}) CHECK(csv.find(v) != std::string::npos);
  c.set("bench_reps", "4");
  CHECK(run("bench", c).code == kExitUsage);
}

TEST_CASE("visualize renders four images") {
  const fs::path out = scratch("vis");
  Config c = small(out);
  c.set("prompt", identity_vp(out).string());
  REQUIRE(run("visualize", c).code == kExitOk);
  const fs::path d = out / "visualize-seed0";
  const std::string orig = slurp(d / "original.ppm");
  CHECK(orig.rfind("P6\n32 32\n255\n", 0) == 0);
  CHECK(orig.size() == std::string("P6\n32 32\n255\n").size() + 32 * 32 * 3);
  CHECK(slurp(d / "prompted.ppm") == orig);
  CHECK(slurp(d / "affine.ppm") == orig);

  // Initial ACAVP prompt at the default canvas.
  const Prompt init = make_prompt(Variant::Acavp, 64, 64);
  const fs::path f = out / "init.acvp";
  const auto bytes = tensorfile_encode(prompt_to_entries(init));
  std::ofstream(f, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  c.set("prompt", f.string());
  c.set("height", "64");
  c.set("width", "64");
  const Ran r = run("visualize", c);
  REQUIRE(r.code == kExitOk);
  CHECK(slurp(d / "original.ppm").rfind("P6\n64 64\n255\n", 0) == 0);
  const std::string key = "mask fraction ";
  const auto at = r.out.find(key);
  REQUIRE(at != std::string::npos);
  // Column j is covered when its source (j - 31.5) / 0.73 + 31.5 lies in (-1, 64).
  int covered = 0;
  for (int j = 0; j < 64; ++j) covered += std::abs((j - 31.5) / 0.73) < 32.5;
  const double expect = 1.0 - double(covered * covered) / (64.0 * 64.0);
  CHECK(std::stod(r.out.substr(at + key.size())) == doctest::Approx(expect).epsilon(1e-4));

  c.set("image_index", "100000");
  CHECK(run("visualize", c).code == kExitUsage);
}

TEST_CASE("embed-check passes, catches a perturbation and rejects empty work") {
  const fs::path out = scratch("embed");
  Config c = small(out);
  const Ran ok = run("embed-check", c);
  CHECK_MESSAGE(ok.code == kExitOk, ok.out);
  CHECK(count_lines(slurp(out / "embed-check-seed0" / "embed.csv")) == 1 + 3 * 2 * 2);

  c.set("embed_perturb", "0.01");
  const Ran bad = run("embed-check", c);
  CHECK(bad.code == kExitCheckFailed);
  CHECK(bad.out.find("FAILED at seed 0 image") != std::string::npos);

  c.set("embed_perturb", "0");
  c.set("embed_images", "0");
  CHECK(run("embed-check", c).code == kExitUsage);
}

TEST_CASE("usage and runtime failures map to exit codes") {
  const fs::path out = scratch("fail");
  Config c = small(out);

  CHECK(run("frobnicate", c).code == kExitUsage);
  CHECK(run("eval", c).code == kExitUsage);  // model required
  c.set("model", (out / "missing.acvp").string());
  const Ran missing = run("eval", c);
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("missing.acvp") != std::string::npos);

  // A model file that is not a TensorFile.
  const fs::path junk = out / "junk.acvp";
  std::ofstream(junk) << "not a tensor file";
  c.set("model", junk.string());
  const Ran corrupt = run("eval", c);
  CHECK(corrupt.code == kExitRuntime);
  CHECK(corrupt.err.find("stage load model") != std::string::npos);

  // Output directory under a regular file.
  c.set("model", model_file().string());
  c.set("out_dir", (junk / "sub").string());
  const Ran io = run("eval", c);
  CHECK(io.code == kExitRuntime);
  CHECK(io.err.find("stage output") != std::string::npos);

  Config t = small(out);
  t.set("model", model_file().string());
  t.set("momentum", "1");
  CHECK(run("train", t).code == kExitUsage);
}
