#include "promptforge/promptforge.h"

#include <cstring>
#include <iostream>
#include <string>

#include "promptforge/app.hpp"

struct pf_config {
  promptforge::Config cfg;
};

struct pf_model {
  promptforge::FrozenModel model;
};

struct pf_prompt {
  promptforge::Prompt prompt;
};

namespace {

using namespace promptforge;

thread_local std::string g_last_error;

pf_status record(pf_status s, const char* what) {
  g_last_error = what;
  return s;
}

template <typename Fn>
pf_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return PF_OK;
  } catch (const Error& e) {
    return record(static_cast<pf_status>(e.code()), e.what());
  } catch (const std::exception& e) {
    return record(PF_INTERNAL_ERROR, e.what());
  } catch (...) {
    return record(PF_INTERNAL_ERROR, "unknown exception");
  }
}

void require(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::InvalidArgument, what);
}

Image image_from(const float* data, int height, int width) {
  require(data != nullptr, "image pointer is null");
  Image img(height, width);
  std::memcpy(img.data.data(), data, img.size() * sizeof(float));
  return img;
}

}  // namespace

extern "C" {

const char* pf_status_name(pf_status s) {
  if (s == PF_INTERNAL_ERROR) return "InternalError";
  if (s < PF_OK || s > PF_CONFIG_ERROR) return "Unknown";
  return error_name(static_cast<ErrorCode>(s)).data();
}

const char* pf_last_error(void) { return g_last_error.c_str(); }

pf_status pf_config_new(pf_config** out) {
  return guarded([&] {
    require(out != nullptr, "out is null");
    *out = new pf_config{};
  });
}

void pf_config_free(pf_config* cfg) { delete cfg; }

pf_status pf_config_set(pf_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg && key && value, "null argument");
    cfg->cfg.set(key, value);
  });
}

pf_status pf_config_get(const pf_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(cfg && key, "null argument");
    const std::string v = cfg->cfg.get(key);
    if (needed) *needed = v.size() + 1;
    if (buf && cap > 0) {
      const std::size_t n = std::min(cap - 1, v.size());
      std::memcpy(buf, v.data(), n);
      buf[n] = '\0';
    }
  });
}

int pf_config_is_set(const pf_config* cfg, const char* key) { return cfg && key && cfg->cfg.is_set(key) ? 1 : 0; }

pf_status pf_config_load(pf_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg && path, "null argument");
    cfg->cfg.load_file(path);
  });
}

pf_status pf_config_apply_env(pf_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    cfg->cfg.apply_env();
  });
}

size_t pf_config_key_count(void) { return config_keys().size(); }

const char* pf_config_key_name(size_t i) {
  return i < config_keys().size() ? config_keys()[i].name.data() : nullptr;
}

const char* pf_config_key_default(size_t i) {
  return i < config_keys().size() ? config_keys()[i].fallback.data() : nullptr;
}

const char* pf_config_key_help(size_t i) {
  return i < config_keys().size() ? config_keys()[i].help.data() : nullptr;
}

size_t pf_command_count(void) { return command_names().size(); }

const char* pf_command_name(size_t i) { return i < command_names().size() ? command_names()[i].data() : nullptr; }

int pf_run(const char* command, const pf_config* cfg) {
  if (!command || !cfg) {
    g_last_error = "null argument";
    return PF_EXIT_USAGE;
  }
  return run_command(command, cfg->cfg, std::cout, std::cerr);
}

pf_status pf_model_load(const char* path, pf_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new pf_model{load_model(path)};
  });
}

pf_status pf_model_random(int num_classes, uint64_t seed, pf_model** out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    *out = new pf_model{FrozenModel(ModelWeights::random(num_classes, RngStream(seed, 0)))};
  });
}

void pf_model_free(pf_model* m) { delete m; }

int pf_model_num_classes(const pf_model* m) { return m ? m->model.num_classes() : 0; }

uint64_t pf_model_checksum(const pf_model* m) { return m ? m->model.checksum() : 0; }

pf_status pf_model_forward(const pf_model* m, const float* image, int height, int width, double* logits) {
  return guarded([&] {
    require(m && logits, "null argument");
    const auto r = model_forward(image_from(image, height, width), m->model);
    std::copy(r.logits.begin(), r.logits.end(), logits);
  });
}

pf_status pf_prompt_new(const char* variant, int height, int width, pf_prompt** out) {
  return guarded([&] {
    require(variant && out, "null argument");
    *out = new pf_prompt{make_prompt(parse_variant(variant), height, width)};
  });
}

pf_status pf_prompt_load(const char* path, pf_prompt** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new pf_prompt{load_prompt(path)};
  });
}

pf_status pf_prompt_save(const pf_prompt* p, const char* path) {
  return guarded([&] {
    require(p && path, "null argument");
    save_prompt(path, p->prompt);
  });
}

void pf_prompt_free(pf_prompt* p) { delete p; }

pf_status pf_prompt_apply(const pf_prompt* p, const float* image, int height, int width, float* out) {
  return guarded([&] {
    require(p && out, "null argument");
    const Image y = PromptApplier(p->prompt).apply(image_from(image, height, width));
    std::memcpy(out, y.data.data(), y.size() * sizeof(float));
  });
}

}  // extern "C"
