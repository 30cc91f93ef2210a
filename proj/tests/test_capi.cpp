#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <string>
#include <unistd.h>
#include <vector>

#include "promptforge/promptforge.h"

// Links only the shared library, the way an outside caller would.

namespace {

std::string temp_path(const char* name) {
  return "/tmp/promptforge-test-capi-" + std::to_string(::getpid()) + "-" + name;
}

struct Shell {
  int code;
  std::string output;
};

Shell shell(const std::string& cmd) {
  Shell s{-1, {}};
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) s.output += buf;
  const int status = ::pclose(p);
  s.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return s;
}

}  // namespace

TEST_CASE("status names and last error") {
  CHECK(std::string(pf_status_name(PF_OK)) == "Ok");
  CHECK(std::string(pf_status_name(PF_CONFIG_ERROR)) == "ConfigError");
  CHECK(std::string(pf_status_name(PF_INTERNAL_ERROR)) == "InternalError");
  CHECK(std::string(pf_status_name(static_cast<pf_status>(57))) == "Unknown");

  pf_config* cfg = nullptr;
  REQUIRE(pf_config_new(&cfg) == PF_OK);
  CHECK(std::string(pf_last_error()).empty());
  CHECK(pf_config_set(cfg, "no_such_key", "1") == PF_CONFIG_ERROR);
  CHECK(std::string(pf_last_error()).find("no_such_key") != std::string::npos);
  CHECK(pf_config_set(cfg, "seed", "5") == PF_OK);
  CHECK(std::string(pf_last_error()).empty());
  CHECK(pf_config_set(nullptr, "seed", "5") == PF_INVALID_ARGUMENT);
  pf_config_free(cfg);
}

TEST_CASE("config get reports the needed size") {
  pf_config* cfg = nullptr;
  REQUIRE(pf_config_new(&cfg) == PF_OK);
  REQUIRE(pf_config_set(cfg, "variant", "autovp") == PF_OK);
  CHECK(pf_config_is_set(cfg, "variant") == 1);
  CHECK(pf_config_is_set(cfg, "seed") == 0);

  size_t needed = 0;
  CHECK(pf_config_get(cfg, "variant", nullptr, 0, &needed) == PF_OK);
  CHECK(needed == 7);
  char small[4];
  CHECK(pf_config_get(cfg, "variant", small, sizeof small, &needed) == PF_OK);
  CHECK(std::string(small) == "aut");
  char big[16];
  CHECK(pf_config_get(cfg, "variant", big, sizeof big, nullptr) == PF_OK);
  CHECK(std::string(big) == "autovp");
  CHECK(pf_config_get(cfg, "nope", big, sizeof big, nullptr) == PF_CONFIG_ERROR);

  CHECK(pf_config_load(cfg, "/nonexistent.cfg") == PF_CONFIG_ERROR);
  pf_config_free(cfg);

  CHECK(pf_config_key_count() > 40);
  CHECK(std::string(pf_config_key_name(0)) == "seed");
  CHECK(pf_config_key_name(pf_config_key_count()) == nullptr);
  CHECK(pf_command_count() == 7);
  CHECK(std::string(pf_command_name(0)) == "train");
}

TEST_CASE("model and prompt handles") {
  pf_model* m = nullptr;
  REQUIRE(pf_model_random(3, 9, &m) == PF_OK);
  CHECK(pf_model_num_classes(m) == 3);
  CHECK(pf_model_checksum(m) != 0);
  pf_model* none = nullptr;
  CHECK(pf_model_random(0, 9, &none) == PF_SHAPE_MISMATCH);
  CHECK(none == nullptr);

  const int h = 24, w = 24;
  std::vector<float> img(3 * h * w);
  for (size_t i = 0; i < img.size(); ++i) img[i] = float(i % 97) / 97.0f;
  double logits[3];
  REQUIRE(pf_model_forward(m, img.data(), h, w, logits) == PF_OK);
  CHECK(pf_model_forward(m, nullptr, h, w, logits) == PF_INVALID_ARGUMENT);

  pf_prompt* vp = nullptr;
  REQUIRE(pf_prompt_new("vp", h, w, &vp) == PF_OK);
  std::vector<float> out(img.size());
  REQUIRE(pf_prompt_apply(vp, img.data(), h, w, out.data()) == PF_OK);
  CHECK(out == img);
  CHECK(pf_prompt_apply(vp, img.data(), h + 1, w, out.data()) == PF_SHAPE_MISMATCH);
  pf_prompt_free(vp);
  CHECK(pf_prompt_new("clip", h, w, &vp) != PF_OK);

  pf_prompt* ac = nullptr;
  REQUIRE(pf_prompt_new("acavp", h, w, &ac) == PF_OK);
  std::vector<float> a(img.size()), b(img.size());
  REQUIRE(pf_prompt_apply(ac, img.data(), h, w, a.data()) == PF_OK);
  const std::string path = temp_path("prompt.acvp");
  REQUIRE(pf_prompt_save(ac, path.c_str()) == PF_OK);
  pf_prompt* back = nullptr;
  REQUIRE(pf_prompt_load(path.c_str(), &back) == PF_OK);
  REQUIRE(pf_prompt_apply(back, img.data(), h, w, b.data()) == PF_OK);
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-5f);
  pf_prompt_free(back);
  pf_prompt_free(ac);
  std::remove(path.c_str());

  CHECK(pf_prompt_load("/nonexistent.acvp", &back) == PF_IO_ERROR);
  CHECK(pf_model_load("/nonexistent.acvp", &none) == PF_IO_ERROR);
  pf_model_free(m);
}

TEST_CASE("pf_run maps usage errors") {
  pf_config* cfg = nullptr;
  REQUIRE(pf_config_new(&cfg) == PF_OK);
  CHECK(pf_run("frobnicate", cfg) == PF_EXIT_USAGE);
  CHECK(pf_run(nullptr, cfg) == PF_EXIT_USAGE);
  CHECK(pf_run("eval", cfg) == PF_EXIT_USAGE);
  pf_config_free(cfg);
}

TEST_CASE("cli binary") {
  const std::string exe = PROMPTFORGE_CLI;
  const Shell bad = shell(exe + " train --learning-rate 3");
  CHECK(bad.code == PF_EXIT_USAGE);
  CHECK(bad.output.find("--learning-rate") != std::string::npos);

  CHECK(shell(exe).code == PF_EXIT_USAGE);
  CHECK(shell(exe + " eval --epochs ten").code == PF_EXIT_USAGE);
  CHECK(shell(exe + " eval --config /nonexistent.cfg").code == PF_EXIT_USAGE);

  const Shell help = shell(exe + " train --help");
  CHECK(help.code == 0);
  CHECK(help.output.find("--grad-normalize") != std::string::npos);

  const std::string dir = temp_path("cli");
  const std::string common = " --out-dir " + dir + " --height 32 --width 32 --embed-images 2 --embed-configs 1";
  const Shell ok = shell(exe + " embed-check" + common);
  CHECK_MESSAGE(ok.code == PF_EXIT_OK, ok.output);
  CHECK(ok.output.find("max abs pixel deviation") != std::string::npos);
  CHECK(shell(exe + " embed-check" + common + " --embed-perturb 0.01").code == PF_EXIT_CHECK_FAILED);
  CHECK(shell("PROMPTFORGE_SEED=4 " + exe + " embed-check" + common).output.find("embed-check-seed4") !=
        std::string::npos);
  shell("rm -rf " + dir);
}
