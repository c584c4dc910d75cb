#include "vitforge/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace vitforge {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Parsers throw std::invalid_argument with a description of the expected form.
std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer");
  return out;
}

std::size_t parse_size(const std::string& v) { return static_cast<std::size_t>(parse_u64(v)); }

double parse_double(const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("expected a finite number");
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::size_t> parse_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(trim(item)));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list of integers");
  return out;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }
std::string fmt_sizes(const std::vector<std::size_t>& v) { return fmt::format("{}", fmt::join(v, ",")); }

template <typename M>
Field size_field(M member) {
  return {[member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); },
          [member](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_size(v); }};
}

template <typename M>
Field double_field(M member) {
  return {[member](const RunConfig& c) { return fmt_double(std::invoke(member, c)); },
          [member](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_double(v); }};
}

template <typename M>
Field bool_field(M member) {
  return {[member](const RunConfig& c) { return fmt_bool(std::invoke(member, c)); },
          [member](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_bool(v); }};
}

template <typename M>
Field string_field(M member) {
  return {[member](const RunConfig& c) { return std::invoke(member, c); },
          [member](RunConfig& c, const std::string& v) { std::invoke(member, c) = v; }};
}

// Accessors into nested structs, usable with std::invoke.
#define VF_AT(path) [](auto& c) -> auto& { return c.path; }

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["seed"] = {[](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.apply_seed(parse_u64(v)); }};
    f["out"] = string_field(VF_AT(out));
    f["checkpoint"] = string_field(VF_AT(checkpoint));

    f["data.root"] = string_field(VF_AT(data.root));
    f["data.split_dir"] = string_field(VF_AT(data.split_dir));
    f["data.synthetic_per_class"] = size_field(VF_AT(data.synthetic_per_class));
    f["data.synthetic_seed"] = {
        [](const RunConfig& c) { return c.data.synthetic_seed_set ? std::to_string(c.data.synthetic_seed) : ""; },
        [](RunConfig& c, const std::string& v) {
          c.data.synthetic_seed_set = !v.empty();
          c.data.synthetic_seed = v.empty() ? 0 : parse_u64(v);
        }};
    f["data.shuffle_train_labels"] = bool_field(VF_AT(data.shuffle_train_labels));

    f["vit.image_height"] = size_field(VF_AT(vit.image_height));
    f["vit.image_width"] = size_field(VF_AT(vit.image_width));
    f["vit.channels"] = size_field(VF_AT(vit.channels));
    f["vit.patch_size"] = size_field(VF_AT(vit.patch_size));
    f["vit.projection_dim"] = size_field(VF_AT(vit.projection_dim));
    f["vit.num_layers"] = size_field(VF_AT(vit.num_layers));
    f["vit.num_heads"] = size_field(VF_AT(vit.num_heads));
    f["vit.num_classes"] = size_field(VF_AT(vit.num_classes));
    f["vit.encoder_mlp_dims"] = {[](const RunConfig& c) { return fmt_sizes(c.vit.encoder_mlp_dims); },
                                 [](RunConfig& c, const std::string& v) { c.vit.encoder_mlp_dims = parse_sizes(v); }};
    // "default" is (2042, 1048); "conventional" is (2048, 1024).
    f["vit.head_dims"] = {[](const RunConfig& c) { return fmt_sizes(c.vit.head_dims); },
                          [](RunConfig& c, const std::string& v) {
                            if (v == "default") {
                              c.vit.head_dims = {2042, 1048};
                            } else if (v == "conventional") {
                              c.vit.head_dims = {2048, 1024};
                            } else {
                              c.vit.head_dims = parse_sizes(v);
                            }
                          }};
    f["vit.dropout_rate"] = double_field(VF_AT(vit.dropout_rate));
    f["vit.head_dropout_rate"] = double_field(VF_AT(vit.head_dropout_rate));
    f["vit.layernorm_eps"] = double_field(VF_AT(vit.layernorm_eps));
    f["vit.init_std"] = double_field(VF_AT(vit.init_std));
    f["vit.activation"] = {[](const RunConfig& c) { return c.vit.activation == Activation::gelu ? "gelu" : "relu"; },
                           [](RunConfig& c, const std::string& v) {
                             if (v == "gelu") {
                               c.vit.activation = Activation::gelu;
                             } else if (v == "relu") {
                               c.vit.activation = Activation::relu;
                             } else {
                               throw std::invalid_argument("expected gelu or relu");
                             }
                           }};

    f["train.learning_rate"] = double_field(VF_AT(train.learning_rate));
    f["train.weight_decay"] = double_field(VF_AT(train.weight_decay));
    f["train.batch_size"] = size_field(VF_AT(train.batch_size));
    f["train.micro_batch_size"] = size_field(VF_AT(train.micro_batch_size));
    f["train.eval_batch_size"] = size_field(VF_AT(train.eval_batch_size));
    f["train.max_epochs"] = size_field(VF_AT(train.max_epochs));
    f["train.adam_beta1"] = double_field(VF_AT(train.adam_beta1));
    f["train.adam_beta2"] = double_field(VF_AT(train.adam_beta2));
    f["train.adam_eps"] = double_field(VF_AT(train.adam_eps));
    f["train.early_stop_patience"] = size_field(VF_AT(train.early_stop_patience));
    f["train.early_stop_min_delta"] = double_field(VF_AT(train.early_stop_min_delta));
    f["train.restore_best"] = bool_field(VF_AT(train.restore_best));
    f["train.target_val_accuracy"] = double_field(VF_AT(train.target_val_accuracy));
    f["train.grad_clip_norm"] = double_field(VF_AT(train.grad_clip_norm));

    f["split.test_fraction"] = double_field(VF_AT(split.test_fraction));
    f["split.validation_fraction"] = double_field(VF_AT(split.validation_fraction));
    f["split.stratified"] = bool_field(VF_AT(split.stratified));

    f["augment.enabled"] = bool_field(VF_AT(augment_enabled));
    f["augment.horizontal_flip"] = bool_field(VF_AT(augment.horizontal_flip));
    f["augment.rotation_degrees"] = double_field(VF_AT(augment.rotation_degrees));
    f["augment.zoom_fraction"] = double_field(VF_AT(augment.zoom_fraction));
    f["augment.width_shift_fraction"] = double_field(VF_AT(augment.width_shift_fraction));
    f["augment.height_shift_fraction"] = double_field(VF_AT(augment.height_shift_fraction));
    return f;
  }();
  return fields;
}

#undef VF_AT

}  // namespace

ConfigError::ConfigError(std::string key, std::size_t line, const std::string& message)
    : std::runtime_error(line > 0 ? fmt::format("line {}: key '{}': {}", line, key, message)
                                  : fmt::format("key '{}': {}", key, message)),
      key_(std::move(key)),
      line_(line) {}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  split.seed = s;
  augment.seed = s;
}

void RunConfig::validate() const {
  try {
    vit.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("vit", 0, e.what());
  }
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train", 0, e.what());
  }
  if (!(split.test_fraction > 0.0 && split.test_fraction < 1.0)) {
    throw ConfigError("split.test_fraction", 0, "must lie in (0, 1)");
  }
  if (!(split.validation_fraction > 0.0 && split.validation_fraction < 1.0)) {
    throw ConfigError("split.validation_fraction", 0, "must lie in (0, 1)");
  }
  if (augment.rotation_degrees < 0.0) throw ConfigError("augment.rotation_degrees", 0, "must be non-negative");
  if (augment.zoom_fraction < 0.0 || augment.zoom_fraction >= 1.0) {
    throw ConfigError("augment.zoom_fraction", 0, "must lie in [0, 1)");
  }
  if (augment.width_shift_fraction < 0.0 || augment.width_shift_fraction > 1.0) {
    throw ConfigError("augment.width_shift_fraction", 0, "must lie in [0, 1]");
  }
  if (augment.height_shift_fraction < 0.0 || augment.height_shift_fraction > 1.0) {
    throw ConfigError("augment.height_shift_fraction", 0, "must lie in [0, 1]");
  }
  if (data.synthetic_per_class == 0) throw ConfigError("data.synthetic_per_class", 0, "must be at least 1");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, std::size_t line) {
  const auto& reg = registry();
  const auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError(key, line, "unknown key");
  try {
    it->second.set(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, line, fmt::format("invalid value '{}': {}", value, e.what()));
  }
}

RunConfig parse_config(const std::string& text, std::map<std::string, std::string>* extra) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ConfigError(content, line_no, "expected 'key = value'");
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw ConfigError(key, line_no, "missing key before '='");
    if (key.rfind("state.", 0) == 0) {
      if (extra == nullptr) throw ConfigError(key, line_no, "run-state keys belong in checkpoints only");
      (*extra)[key] = value;
      continue;
    }
    set_config_value(cfg, key, value, line_no);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("--config", 0, fmt::format("cannot read {}", file.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : registry()) out += fmt::format("{} = {}\n", key, field.get(cfg));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& entry : registry()) keys.push_back(entry.first);
  return keys;
}

}  // namespace vitforge
