#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "promptforge/data.hpp"
#include "promptforge/evalbench.hpp"
#include "promptforge/frozen_model.hpp"
#include "promptforge/pipeline.hpp"
#include "promptforge/trainer.hpp"

namespace promptforge {

enum class KeyType { Int, UInt, Real, Bool, Text, Choice };

struct ConfigKey {
  std::string_view name;
  KeyType type;
  std::string_view fallback;
  std::string_view help;
  std::vector<std::string_view> choices = {};  // KeyType::Choice
};

const std::vector<ConfigKey>& config_keys();

// Flat key=value settings. Values are validated against their declared
// type when set; unknown keys are rejected with ConfigError.
class Config {
 public:
  void set(std::string_view key, std::string_view value);
  bool is_set(std::string_view key) const { return explicit_.count(std::string(key)) != 0; }
  std::string get(std::string_view key) const;

  long long get_int(std::string_view key) const;
  std::uint64_t get_uint(std::string_view key) const;
  double get_real(std::string_view key) const;
  bool get_bool(std::string_view key) const;

  // Lines of `key = value`; blank lines and lines starting with '#' skip.
  void load_text(std::string_view text, std::string_view origin = "<text>");
  void load_file(const std::filesystem::path& path);
  // Seed fallback from PROMPTFORGE_SEED when no explicit seed was given.
  void apply_env();

  // Every key in table order, `key=value` per line.
  std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

TrainConfig train_config(const Config& c);
PromptSettings prompt_settings(const Config& c);
ShiftConfig shift_config(const Config& c);
PretrainConfig pretrain_config(const Config& c);

struct Experiment {
  Dataset source;
  Dataset target;
};

// Source and shifted target sets (or an IDX pair as the target when
// configured), split train/val/test, all derived from the seed.
Experiment build_experiment(const Config& c);

// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2, kExitRuntime = 3 };

const std::vector<std::string_view>& command_names();

// Runs one command. Human-readable output goes to `out`, diagnostics to
// `err`; never throws.
int run_command(std::string_view command, const Config& c, std::ostream& out, std::ostream& err);

// Git blob hash: sha1("blob <len>\0" + bytes), lowercase hex.
std::string git_blob_hash(std::string_view bytes);

// Binary PPM (P6, maxval 255); values clamp to [0,1] then round.
std::string encode_ppm(const Image& img);
Image mask_to_image(const Mask& m);

}  // namespace promptforge
