#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "promptforge/promptforge.h"

namespace {

struct Invocation {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> flags;  // key, value in command-line order
};

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

int report(pf_status s) {
  std::fprintf(stderr, "error: %s\n", pf_last_error());
  return s == PF_CONFIG_ERROR || s == PF_INVALID_ARGUMENT ? PF_EXIT_USAGE : PF_EXIT_RUNTIME;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual prompt training, evaluation and benchmarking on a frozen classifier", "promptforge"};
  app.require_subcommand(1);

  std::map<std::string, std::string> values;  // key -> raw flag value
  std::map<std::string, CLI::Option*> options;
  std::map<std::string, Invocation> invocations;

  for (size_t c = 0; c < pf_command_count(); ++c) {
    const std::string name = pf_command_name(c);
    CLI::App* sub = app.add_subcommand(name);
    Invocation& inv = invocations[name];
    sub->add_option("-c,--config", inv.config_file, "key=value config file")->check(CLI::ExistingFile);
    for (size_t k = 0; k < pf_config_key_count(); ++k) {
      const std::string key = pf_config_key_name(k);
      std::string names = "--" + key;
      if (dashed(key) != key) names += ",--" + dashed(key);
      const std::string help = std::string(pf_config_key_help(k)) + " [" + pf_config_key_default(k) + "]";
      sub->add_option_function<std::string>(
          names, [&inv, key](const std::string& v) { inv.flags.emplace_back(key, v); }, help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return PF_EXIT_USAGE;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const Invocation& inv = invocations[chosen->get_name()];

  pf_config* cfg = nullptr;
  if (pf_status s = pf_config_new(&cfg); s != PF_OK) return report(s);
  int code = PF_EXIT_OK;
  pf_status s = PF_OK;
  if (!inv.config_file.empty()) s = pf_config_load(cfg, inv.config_file.c_str());
  for (const auto& [key, value] : inv.flags)
    if (s == PF_OK) s = pf_config_set(cfg, key.c_str(), value.c_str());
  if (s == PF_OK) s = pf_config_apply_env(cfg);
  code = s == PF_OK ? pf_run(chosen->get_name().c_str(), cfg) : report(s);
  pf_config_free(cfg);
  return code;
}
