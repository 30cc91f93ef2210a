#include "promptforge/app.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace promptforge {

namespace fs = std::filesystem;

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", KeyType::UInt, "0", "master seed for data, pretraining and training"},
      {"variant", KeyType::Choice, "acavp", "prompt variant", {"acavp", "vp", "evp", "autovp"}},
      {"augment", KeyType::Choice, "none", "training-time augmentation", {"none", "trivial"}},
      {"epochs", KeyType::Int, "200", "training epochs"},
      {"lr0", KeyType::Real, "40", "initial learning rate (cosine schedule)"},
      {"momentum", KeyType::Real, "0.9", "SGD momentum"},
      {"batch_size", KeyType::Int, "64", "samples per step"},
      {"clip_value", KeyType::Real, "0.001", "elementwise gradient clip"},
      {"grad_normalize", KeyType::Bool, "false", "scale each gradient group to unit norm before clipping"},
      {"weight_decay", KeyType::Real, "0", "L2 on raw prompt parameters"},
      {"mse_reg_weight", KeyType::Real, "0", "weight of mean((x_tilde - x)^2)"},
      {"dropout", KeyType::Real, "0", "dropout on pooled features during training"},
      {"workers", KeyType::Int, "1", "threads for per-sample work"},
      {"r_t", KeyType::Real, "0.05", "translation range"},
      {"r_theta", KeyType::Real, "0.1", "rotation range (radians)"},
      {"r_sh", KeyType::Real, "0.1", "shear range"},
      {"r_sigma", KeyType::Real, "6", "color factor range"},
      {"mask_mode", KeyType::Choice, "geometric", "dynamic mask rule", {"geometric", "zero-test"}},
      {"vp_pad", KeyType::Int, "-1", "VP border width in pixels; -1 scales 28/224 to the canvas"},
      {"vp_full_canvas", KeyType::Bool, "false", "VP additive prompt over the whole image"},
      {"evp_scale", KeyType::Real, "0.732142857142857", "EVP resize factor"},
      {"height", KeyType::Int, "64", "synthetic image height"},
      {"width", KeyType::Int, "64", "synthetic image width"},
      {"classes", KeyType::Int, "4", "synthetic class count"},
      {"n_train", KeyType::Int, "2000", "train split size"},
      {"n_val", KeyType::Int, "200", "val split size"},
      {"n_test", KeyType::Int, "500", "test split size"},
      {"shift_hue", KeyType::Real, "90", "target hue rotation (degrees)"},
      {"shift_tx", KeyType::Int, "3", "target translation x (pixels)"},
      {"shift_ty", KeyType::Int, "-2", "target translation y (pixels)"},
      {"shift_level", KeyType::Real, "0.25", "target brightness offset"},
      {"shift_noise", KeyType::Real, "0", "target gaussian noise std"},
      {"idx_images", KeyType::Text, "", "IDX image file replacing the synthetic generator"},
      {"idx_labels", KeyType::Text, "", "IDX label file paired with idx_images"},
      {"pretrain_epochs", KeyType::Int, "30", "source pretraining epoch cap"},
      {"pretrain_lr", KeyType::Real, "0.05", "source pretraining learning rate"},
      {"pretrain_batch", KeyType::Int, "32", "source pretraining batch size"},
      {"pretrain_target", KeyType::Real, "0.9", "source val accuracy that stops pretraining"},
      {"model", KeyType::Text, "", "frozen model TensorFile; empty pretrains one"},
      {"prompt", KeyType::Text, "", "prompt TensorFile; empty means no prompt"},
      {"out_dir", KeyType::Text, "runs", "parent directory of run directories"},
      {"split", KeyType::Choice, "test", "evaluation split", {"train", "val", "test"}},
      {"kinds", KeyType::Text, "all", "comma-separated corruption kinds or 'all'"},
      {"bench_height", KeyType::Int, "224", "bench canvas height"},
      {"bench_width", KeyType::Int, "224", "bench canvas width"},
      {"bench_batch", KeyType::Int, "16", "bench images per timed batch"},
      {"bench_reps", KeyType::Int, "20", "timed repetitions"},
      {"bench_warmup", KeyType::Int, "2", "untimed warmup repetitions"},
      {"image_index", KeyType::Int, "0", "visualize: position within the split"},
      {"embed_images", KeyType::Int, "20", "embed-check: random images"},
      {"embed_configs", KeyType::Int, "5", "embed-check: random configurations per image and variant"},
      {"embed_perturb", KeyType::Real, "0", "embed-check: offset added to embedded prompts (negative control)"},
  };
  return keys;
}

namespace {

const ConfigKey& find_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  fail(ErrorCode::ConfigError, "unknown key '" + std::string(name) + "'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

std::optional<bool> parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  return std::nullopt;
}

void check_value(const ConfigKey& k, std::string_view v) {
  bool ok = true;
  switch (k.type) {
    case KeyType::Int: ok = parse_number<long long>(v).has_value(); break;
    case KeyType::UInt: ok = parse_number<std::uint64_t>(v).has_value(); break;
    case KeyType::Real: {
      auto d = parse_number<double>(v);
      ok = d && std::isfinite(*d);
      break;
    }
    case KeyType::Bool: ok = parse_bool(v).has_value(); break;
    case KeyType::Text: break;
    case KeyType::Choice: ok = std::find(k.choices.begin(), k.choices.end(), v) != k.choices.end(); break;
  }
  if (!ok) fail(ErrorCode::ConfigError, "bad value '" + std::string(v) + "' for key '" + std::string(k.name) + "'");
}

}  // namespace

void Config::set(std::string_view key, std::string_view value) {
  const ConfigKey& k = find_key(key);
  value = trim(value);
  check_value(k, value);
  values_[std::string(key)] = std::string(value);
  explicit_.insert(std::string(key));
}

std::string Config::get(std::string_view key) const {
  const ConfigKey& k = find_key(key);
  auto it = values_.find(std::string(key));
  return it == values_.end() ? std::string(k.fallback) : it->second;
}

long long Config::get_int(std::string_view key) const { return *parse_number<long long>(get(key)); }
std::uint64_t Config::get_uint(std::string_view key) const { return *parse_number<std::uint64_t>(get(key)); }
double Config::get_real(std::string_view key) const { return *parse_number<double>(get(key)); }
bool Config::get_bool(std::string_view key) const { return *parse_bool(get(key)); }

void Config::load_text(std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorCode::ConfigError, std::string(origin) + ":" + std::to_string(line_no) + ": expected key=value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void Config::load_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ConfigError, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

void Config::apply_env() {
  if (is_set("seed")) return;
  if (const char* env = std::getenv("PROMPTFORGE_SEED"); env && *env) {
    try {
      set("seed", env);
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, std::string("PROMPTFORGE_SEED: ") + e.what());
    }
  }
}

std::string Config::echo() const {
  std::string s;
  for (const auto& k : config_keys()) s += std::string(k.name) + "=" + get(k.name) + "\n";
  return s;
}

TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.lr0 = c.get_real("lr0");
  t.epochs = int(c.get_int("epochs"));
  t.momentum = c.get_real("momentum");
  t.batch_size = int(c.get_int("batch_size"));
  t.clip_value = c.get_real("clip_value");
  t.grad_normalize = c.get_bool("grad_normalize");
  t.weight_decay = c.get_real("weight_decay");
  t.mse_reg_weight = c.get_real("mse_reg_weight");
  t.dropout = c.get_real("dropout");
  t.augment = c.get("augment") == "trivial" ? AugmentMode::Trivial : AugmentMode::None;
  t.seed = c.get_uint("seed");
  t.workers = int(c.get_int("workers"));
  return t;
}

PromptSettings prompt_settings(const Config& c) {
  PromptSettings s;
  s.ranges = AffineRanges{c.get_real("r_t"), c.get_real("r_theta"), c.get_real("r_sh")};
  s.color_range = c.get_real("r_sigma");
  s.mask_mode = c.get("mask_mode") == "zero-test" ? MaskMode::ZeroTest : MaskMode::Geometric;
  s.vp_pad = int(c.get_int("vp_pad"));
  s.vp_full_canvas = c.get_bool("vp_full_canvas");
  s.evp_scale = c.get_real("evp_scale");
  return s;
}

ShiftConfig shift_config(const Config& c) {
  ShiftConfig s;
  s.hue_degrees = c.get_real("shift_hue");
  s.translate_x = int(c.get_int("shift_tx"));
  s.translate_y = int(c.get_int("shift_ty"));
  s.level_delta = c.get_real("shift_level");
  s.noise_std = c.get_real("shift_noise");
  s.seed = RngStream(c.get_uint("seed"), 0).derive("shift-noise").next_u64();
  return s;
}

PretrainConfig pretrain_config(const Config& c) {
  PretrainConfig p;
  p.max_epochs = int(c.get_int("pretrain_epochs"));
  p.lr = c.get_real("pretrain_lr");
  p.batch_size = int(c.get_int("pretrain_batch"));
  p.target_accuracy = c.get_real("pretrain_target");
  return p;
}

Experiment build_experiment(const Config& c) {
  const long long nt = c.get_int("n_train"), nv = c.get_int("n_val"), ns = c.get_int("n_test");
  if (nt < 1 || nv < 1 || ns < 1) fail(ErrorCode::ConfigError, "n_train, n_val and n_test must be >= 1");
  const double total = double(nt + nv + ns);
  const std::array<double, 3> fractions = {double(nt) / total, double(nv) / total, double(ns) / total};
  const RngStream root(c.get_uint("seed"), 0);
  const ShiftConfig shift = shift_config(c);

  Experiment e;
  const std::string images = c.get("idx_images"), labels = c.get("idx_labels");
  if (images.empty() != labels.empty()) fail(ErrorCode::ConfigError, "idx_images and idx_labels go together");
  if (!images.empty()) {
    const Dataset base = load_idx(images, labels);
    e.source = split(base, fractions, root.derive("source-split"));
    e.target = split(shift_domain(base, shift), fractions, root.derive("target-split"));
    return e;
  }
  const int h = int(c.get_int("height")), w = int(c.get_int("width")), k = int(c.get_int("classes"));
  const auto n = std::size_t(nt + nv + ns);
  e.source = split(gen_shapes(n, h, w, k, root.derive("source")), fractions, root.derive("source-split"));
  e.target = split(shift_domain(gen_shapes(n, h, w, k, root.derive("target")), shift), fractions,
                   root.derive("target-split"));
  return e;
}

const std::vector<std::string_view>& command_names() {
  static const std::vector<std::string_view> names = {"train",     "eval",        "corrupt", "bench",
                                                      "visualize", "embed-check", "pretrain"};
  return names;
}

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) fail(ErrorCode::IoError, "sha1 context allocation failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) fail(ErrorCode::IoError, "sha1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

std::string encode_ppm(const Image& img) {
  std::string s = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t n = img.plane();
  s.reserve(s.size() + 3 * n);
  for (std::size_t p = 0; p < n; ++p)
    for (int c = 0; c < Image::channels; ++c) {
      const float v = std::clamp(img.data[c * n + p], 0.0f, 1.0f);
      s += char(std::lround(double(v) * 255.0));
    }
  return s;
}

Image mask_to_image(const Mask& m) {
  Image img(m.height, m.width);
  const std::size_t n = m.plane();
  for (int c = 0; c < Image::channels; ++c)
    for (std::size_t p = 0; p < n; ++p) img.data[c * n + p] = m.data[p] ? 1.0f : 0.0f;
  return img;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + p.string());
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  return Split::Test;
}

class Run {
 public:
  Run(std::string_view command, const Config& c, std::ostream& out) : command_(command), c_(c), out_(out) {}

  std::string stage = "config";

  const fs::path& dir() {
    if (dir_.empty()) {
      stage = "output";
      fs::path d = fs::path(c_.get("out_dir")) / (command_ + "-seed" + c_.get("seed"));
      std::error_code ec;
      fs::create_directories(d, ec);
      if (ec) fail(ErrorCode::IoError, "cannot create run directory " + d.string() + ": " + ec.message());
      dir_ = d;
    }
    return dir_;
  }

  void emit(const std::string& name, std::string_view bytes) {
    write_bytes(dir() / name, bytes);
    outputs_.emplace_back(name, git_blob_hash(bytes));
  }

  void emit(const std::string& name, const std::vector<std::uint8_t>& bytes) {
    emit(name, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }

  void input(const std::string& name, std::string_view bytes) { inputs_.emplace_back(name, git_blob_hash(bytes)); }

  fs::path required_file(std::string_view key) {
    const std::string p = c_.get(key);
    if (p.empty()) throw UsageError(std::string(key) + " is required for " + command_);
    if (!fs::is_regular_file(p)) throw UsageError(std::string(key) + " file not found: " + p);
    input(std::string(key), read_bytes(p));
    return p;
  }

  std::optional<fs::path> optional_file(std::string_view key) {
    if (c_.get(key).empty()) return std::nullopt;
    return required_file(key);
  }

  FrozenModel model_or_pretrain(const Experiment& e) {
    if (auto p = optional_file("model")) {
      stage = "load model";
      return load_model(*p);
    }
    stage = "pretrain";
    PretrainResult r = pretrain_source(e.source, pretrain_config(c_), RngStream(c_.get_uint("seed"), 0).derive("pretrain"));
    out_ << "pretrained source model: val accuracy " << fmt(r.val_accuracy) << " after " << r.epochs << " epochs"
         << (r.converged ? "" : " (target not reached)") << "\n";
    const auto entries = model_to_entries(r.model);
    emit("model.acvp", tensorfile_encode(entries));
    return r.model;
  }

  std::optional<Prompt> prompt_if_any() {
    if (auto p = optional_file("prompt")) {
      stage = "load prompt";
      return load_prompt(*p);
    }
    return std::nullopt;
  }

  void finish() {
    stage = "manifest";
    const std::string cfg = c_.echo();
    write_bytes(dir() / "config.txt", cfg);
    std::string m = "command=" + command_ + "\nseed=" + c_.get("seed") + "\nconfig=" + git_blob_hash(cfg) + "\n";
    for (const auto& [k, h] : inputs_) m += "input." + k + "=" + h + "\n";
    for (const auto& [k, h] : outputs_) m += "output." + k + "=" + h + "\n";
    write_bytes(dir() / "manifest.txt", m);
    out_ << "run directory: " << dir().string() << "\n";
  }

 private:
  std::string command_;
  const Config& c_;
  std::ostream& out_;
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> inputs_, outputs_;
};

std::string eval_csv(const EvalReport& r) {
  std::string s = "class,n,accuracy\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k)
    s += std::to_string(k) + "," + std::to_string(r.class_n[k]) + "," + fmt(r.per_class[k]) + "\n";
  s += "all," + std::to_string(r.n) + "," + fmt(r.overall) + "\n";
  return s;
}

int cmd_train(const Config& c, Run& run, std::ostream& out) {
  const TrainConfig tc = train_config(c);
  tc.validate();
  const PromptSettings ps = prompt_settings(c);
  run.stage = "data";
  const Experiment e = build_experiment(c);
  const FrozenModel model = run.model_or_pretrain(e);
  const std::uint64_t checksum = model.checksum();

  run.stage = "init prompt";
  const Image& probe = e.target.images.front();
  Prompt init = make_prompt(parse_variant(c.get("variant")), probe.height, probe.width, ps);
  if (auto p = run.prompt_if_any()) init = *p;

  run.stage = "train";
  const int every = std::max(1, tc.epochs / 10);
  TrainResult r = train_prompt(tc, model, e.target, init, [&](const EpochMetrics& m) {
    if (m.epoch % every == 0 || m.epoch == tc.epochs)
      out << "epoch " << m.epoch << " lr " << fmt(m.lr) << " loss " << fmt(m.train_loss) << " train_acc "
          << fmt(m.train_acc) << " val_acc " << fmt(m.val_acc) << "\n";
  });
  if (model.checksum() != checksum) fail(ErrorCode::InvalidArgument, "frozen model changed during training");

  // Report on exactly what prompt.acvp will hold (affine raws are f32 on disk).
  const auto best_entries = prompt_to_entries(r.best);
  r.best = prompt_from_entries(best_entries);

  run.stage = "evaluate";
  const EvalReport zero = evaluate(model, nullptr, e.target, Split::Test, tc.workers);
  const EvalReport test = evaluate(model, &r.best, e.target, Split::Test, tc.workers);
  const EvalReport train = evaluate(model, &r.best, e.target, Split::Train, tc.workers);

  run.stage = "output";
  run.emit("metrics.csv", r.log.to_csv());
  run.emit("prompt.acvp", tensorfile_encode(best_entries));
  std::string summary = "metric,value\n";
  summary += "zero_shot_test_acc," + fmt(zero.overall) + "\n";
  summary += "best_epoch," + std::to_string(r.best_epoch) + "\n";
  summary += "best_val_acc," + fmt(r.best_val_acc) + "\n";
  summary += "train_acc," + fmt(train.overall) + "\n";
  summary += "test_acc," + fmt(test.overall) + "\n";
  run.emit("summary.csv", summary);
  out << "zero-shot test accuracy " << fmt(zero.overall) << "\n"
      << "best epoch " << r.best_epoch << " val accuracy " << fmt(r.best_val_acc) << "\n"
      << "prompted test accuracy " << fmt(test.overall) << " (train " << fmt(train.overall) << ")\n";
  run.finish();
  return kExitOk;
}

int cmd_pretrain(const Config& c, Run& run, std::ostream& out) {
  run.stage = "data";
  const Experiment e = build_experiment(c);
  run.stage = "pretrain";
  PretrainResult r = pretrain_source(e.source, pretrain_config(c), RngStream(c.get_uint("seed"), 0).derive("pretrain"));
  const double src = model_accuracy(r.model, e.source, Split::Test);
  const double zero = model_accuracy(r.model, e.target, Split::Test);
  run.stage = "output";
  run.emit("model.acvp", tensorfile_encode(model_to_entries(r.model)));
  run.emit("pretrain.csv", "metric,value\nepochs," + std::to_string(r.epochs) + "\nsource_val_acc," +
                               fmt(r.val_accuracy) + "\nsource_test_acc," + fmt(src) + "\ntarget_test_acc," +
                               fmt(zero) + "\n");
  out << "source val accuracy " << fmt(r.val_accuracy) << " after " << r.epochs << " epochs"
      << (r.converged ? "" : " (target not reached)") << "\n"
      << "source test accuracy " << fmt(src) << ", target zero-shot " << fmt(zero) << "\n";
  run.finish();
  return kExitOk;
}

int cmd_eval(const Config& c, Run& run, std::ostream& out) {
  const fs::path model_path = run.required_file("model");
  const auto prompt = run.prompt_if_any();
  run.stage = "load model";
  const FrozenModel model = load_model(model_path);
  run.stage = "data";
  const Experiment e = build_experiment(c);
  run.stage = "evaluate";
  const Split s = parse_split(c.get("split"));
  const EvalReport r = evaluate(model, prompt ? &*prompt : nullptr, e.target, s, int(c.get_int("workers")));
  run.emit("eval.csv", eval_csv(r));
  out << split_name(s) << " accuracy " << fmt(r.overall) << " over " << r.n << " images\n";
  run.finish();
  return kExitOk;
}

std::vector<CorruptionKind> parse_kinds(const std::string& text) {
  if (text == "all") return all_corruptions();
  std::vector<CorruptionKind> kinds;
  std::string_view rest = text;
  while (!rest.empty()) {
    const std::size_t comma = rest.find(',');
    const std::string_view item = trim(rest.substr(0, comma));
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    if (item.empty()) continue;
    try {
      kinds.push_back(parse_corruption(item));
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, e.what());
    }
  }
  return kinds;
}

int cmd_corrupt(const Config& c, Run& run, std::ostream& out) {
  const std::vector<CorruptionKind> kinds = parse_kinds(c.get("kinds"));
  const fs::path model_path = run.required_file("model");
  const auto prompt = run.prompt_if_any();
  run.stage = "load model";
  const FrozenModel model = load_model(model_path);
  run.stage = "data";
  const Experiment e = build_experiment(c);
  run.stage = "corrupt";
  const Split s = parse_split(c.get("split"));
  const RngStream rng = RngStream(c.get_uint("seed"), 0).derive("corruption");
  const CorruptionReport r = corruption_eval(model, prompt ? &*prompt : nullptr, e.target, s, kinds, rng,
                                             int(c.get_int("workers")));
  run.emit("corruption.csv", r.to_csv());
  for (const auto& cell : r.cells)
    out << corruption_name(cell.kind) << " severity " << cell.severity << ": " << fmt(cell.accuracy) << "\n";
  out << "mean corrupted accuracy " << fmt(r.mean) << "\n";
  run.finish();
  return kExitOk;
}

int cmd_bench(const Config& c, Run& run, std::ostream& out) {
  BenchConfig b;
  b.height = int(c.get_int("bench_height"));
  b.width = int(c.get_int("bench_width"));
  b.batch = int(c.get_int("bench_batch"));
  b.reps = int(c.get_int("bench_reps"));
  b.warmup = int(c.get_int("bench_warmup"));
  b.seed = c.get_uint("seed");
  if (b.reps < 5) throw UsageError("bench_reps must be >= 5");
  if (b.height < 1 || b.width < 1 || b.batch < 1 || b.warmup < 0)
    throw UsageError("bench canvas, batch and warmup must be positive");
  const auto model_path = run.optional_file("model");
  const auto prompt = run.prompt_if_any();
  run.stage = "load model";
  const FrozenModel model = model_path ? load_model(*model_path)
                                       : FrozenModel(ModelWeights::random(int(c.get_int("classes")),
                                                                          RngStream(b.seed, 0).derive("bench-model")));
  std::vector<Prompt> prompts;
  if (prompt) prompts.push_back(*prompt);
  run.stage = "bench";
  const TimingReport r = bench_timing(model, b, prompts);
  run.emit("bench.csv", r.to_csv());
  out << "canvas " << b.height << "x" << b.width << ", batch " << b.batch << ", " << b.reps << " reps after "
      << b.warmup << " warmup\n";
  for (const auto& row : r.rows)
    out << variant_name(row.variant) << ": prompt " << fmt(row.prompt_median * 1e3) << " ms, model "
        << fmt(row.model_median * 1e3) << " ms, relative " << fmt(row.relative) << "\n";
  run.finish();
  return kExitOk;
}

int cmd_visualize(const Config& c, Run& run, std::ostream& out) {
  const fs::path prompt_path = run.required_file("prompt");
  run.stage = "load prompt";
  const Prompt prompt = load_prompt(prompt_path);
  run.stage = "data";
  const Experiment e = build_experiment(c);
  const auto idx = e.target.indices(parse_split(c.get("split")));
  const long long at = c.get_int("image_index");
  if (at < 0 || std::size_t(at) >= idx.size()) throw UsageError("image_index out of range for the split");
  const Image& x = e.target.images[idx[std::size_t(at)]];
  run.stage = "render";
  const PromptStages st = prompt_stages(prompt, x);
  run.stage = "output";
  run.emit("original.ppm", encode_ppm(x));
  run.emit("affine.ppm", encode_ppm(st.warped));
  run.emit("mask.ppm", encode_ppm(mask_to_image(st.mask)));
  run.emit("prompted.ppm", encode_ppm(st.prompted));
  out << "mask fraction " << fmt(st.mask.fraction()) << "\n";
  run.finish();
  return kExitOk;
}

Image random_image(int h, int w, RngStream& rng) {
  Image img(h, w);
  for (float& v : img.data) v = float(rng.uniform());
  return img;
}

Field random_field(int h, int w, RngStream& rng) {
  Field f(h, w);
  for (float& v : f.data) v = float(rng.uniform(-0.5, 0.5));
  return f;
}

int cmd_embed_check(const Config& c, Run& run, std::ostream& out) {
  const long long n_images = c.get_int("embed_images"), n_configs = c.get_int("embed_configs");
  if (n_images < 1 || n_configs < 1) throw UsageError("embed-check needs embed_images >= 1 and embed_configs >= 1");
  const int h = int(c.get_int("height")), w = int(c.get_int("width"));
  const double perturb = c.get_real("embed_perturb");
  const PromptSettings ps = prompt_settings(c);
  const std::uint64_t seed = c.get_uint("seed");
  constexpr double kTolerance = 1e-5;

  run.stage = "embed-check";
  double worst = 0.0;
  std::string worst_where = "none";
  std::string csv = "image,config,variant,max_abs_dev\n";
  for (long long i = 0; i < n_images; ++i) {
    RngStream rng = RngStream(seed, 0).derive("embed").derive(std::uint64_t(i));
    const Image x = random_image(h, w, rng);
    for (long long j = 0; j < n_configs; ++j) {
      for (Variant v : {Variant::Evp, Variant::AutoVp}) {
        BaselineConfig b = make_baseline(v, h, w);
        b.delta = random_field(h, w, rng);
        const double s = rng.uniform(0.5, 0.95);
        if (v == Variant::Evp)
          b.scale = s;
        else
          b.scale_raw = logit(s);
        const BaselineForward ref = baseline_forward(x, b, ps.mask_mode);
        PromptParams p = v == Variant::Evp ? embed_evp_as_acavp(b, ps.ranges, ps.color_range)
                                           : embed_autovp_as_acavp(b, ps.ranges, ps.color_range);
        for (float& d : p.additive.delta.data) d = float(d + perturb);
        const PipelineForward got = acavp_forward(x, p, ps.mask_mode);
        double dev = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k)
          dev = std::max(dev, std::abs(double(got.image.data[k]) - double(ref.image.data[k])));
        csv += std::to_string(i) + "," + std::to_string(j) + "," + std::string(variant_name(v)) + "," + fmt(dev) + "\n";
        if (dev > worst) {
          worst = dev;
          worst_where = "seed " + std::to_string(seed) + " image " + std::to_string(i) + " config " +
                        std::to_string(j) + " (" + std::string(variant_name(v)) + ")";
        }
      }
    }
  }
  run.emit("embed.csv", csv);
  out << "max abs pixel deviation " << fmt(worst) << " over " << n_images * n_configs * 2 << " pairs\n";
  run.finish();
  if (worst > kTolerance) {
    out << "embedding check FAILED at " << worst_where << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

}  // namespace

int run_command(std::string_view command, const Config& c, std::ostream& out, std::ostream& err) {
  Run run(command, c, out);
  try {
    if (command == "train") return cmd_train(c, run, out);
    if (command == "eval") return cmd_eval(c, run, out);
    if (command == "corrupt") return cmd_corrupt(c, run, out);
    if (command == "bench") return cmd_bench(c, run, out);
    if (command == "visualize") return cmd_visualize(c, run, out);
    if (command == "embed-check") return cmd_embed_check(c, run, out);
    if (command == "pretrain") return cmd_pretrain(c, run, out);
    err << "error: unknown command '" << command << "'\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    const bool usage = e.code() == ErrorCode::ConfigError ||
                       (run.stage == "config" && e.code() == ErrorCode::InvalidArgument);
    err << "error: " << (usage ? "" : "stage " + run.stage + ": ") << e.what() << "\n";
    return usage ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: stage " << run.stage << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace promptforge
