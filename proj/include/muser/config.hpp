#pragma once

// Experiment configuration: one flat `key = value` text format with dotted
// namespaces. The same canonical serialization is embedded in checkpoints,
// so configs round-trip bit-exactly.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "muser/common.hpp"
#include "muser/encoders.hpp"
#include "muser/signal.hpp"
#include "muser/text.hpp"

namespace muser {

inline std::string window_name(Window w) { return w == Window::kHann ? "hann" : "rect"; }

inline Window window_from_name(const std::string& s) {
  if (s == "hann") return Window::kHann;
  if (s == "rect") return Window::kRect;
  throw UsageError("unknown window '" + s + "' (expected hann or rect)");
}

struct TrainConfig {
  ModelConfig model;
  StftParams stft;

  std::size_t batch_size = 16;
  std::size_t epochs = 40;
  double lr = 3e-4;
  std::string optimizer = "adam";  // adam | sgd
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool spectrum_enabled = true;
  std::string loss_aggregation = "mean";  // mean | sum
  bool clamp_logit_scale = false;         // if set, e^tau is capped at 100
  std::size_t checkpoint_every = 0;       // extra checkpoint cadence; 0 = end only

  std::size_t vocab_min_count = 1;
  std::size_t max_vocab = 2048;
  std::string caption_template = default_template().text;

  void validate() const {
    model.validate();
    if (batch_size < 2) throw UsageError("config: train.batch_size must be >= 2");
    if (epochs < 1) throw UsageError("config: train.epochs must be >= 1");
    if (!(lr > 0.0)) throw UsageError("config: train.lr must be positive");
    if (optimizer != "adam" && optimizer != "sgd")
      throw UsageError("config: train.optimizer must be adam or sgd");
    if (loss_aggregation != "mean" && loss_aggregation != "sum")
      throw UsageError("config: train.loss_aggregation must be mean or sum");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw UsageError("config: adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw UsageError("config: train.adam_eps must be positive");
    if (stft.frame_len < 2 || stft.hop < 1 || stft.hop > stft.frame_len)
      throw UsageError("config: stft frame/hop out of range");
    if (!(stft.eps > 0.0)) throw UsageError("config: stft.eps must be positive");
    if (max_vocab < 5) throw UsageError("config: text.max_vocab must be >= 5");
    if (vocab_min_count < 1) throw UsageError("config: text.min_count must be >= 1");
    TemplateSpec::parse(caption_template);
  }

  bool operator==(const TrainConfig& o) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Canonical (key, value) list, alphabetical by key; serialization and the
/// checkpoint config blob both use exactly this ordering.
inline std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& c) {
  const auto u = [](std::size_t v) { return std::to_string(v); };
  const auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
  return {
      {"model.audio_dim", u(c.model.audio_dim)},
      {"model.audio_hidden", u(c.model.audio_hidden)},
      {"model.embed_dim", u(c.model.embed_dim)},
      {"model.frame_feat", u(c.model.frame_feat)},
      {"model.grid", u(c.model.grid)},
      {"model.max_len", u(c.model.max_len)},
      {"model.spec_dim", u(c.model.spec_dim)},
      {"model.spec_hidden", u(c.model.spec_hidden)},
      {"model.text_dim", u(c.model.text_dim)},
      {"model.vocab_size", u(c.model.vocab_size)},
      {"stft.eps", format_double(c.stft.eps)},
      {"stft.frame_len", u(c.stft.frame_len)},
      {"stft.hop", u(c.stft.hop)},
      {"stft.log_compress", b(c.stft.log_compress)},
      {"stft.window", window_name(c.stft.window)},
      {"text.max_vocab", u(c.max_vocab)},
      {"text.min_count", u(c.vocab_min_count)},
      {"text.template", c.caption_template},
      {"train.adam_beta1", format_double(c.adam_beta1)},
      {"train.adam_beta2", format_double(c.adam_beta2)},
      {"train.adam_eps", format_double(c.adam_eps)},
      {"train.batch_size", u(c.batch_size)},
      {"train.checkpoint_every", u(c.checkpoint_every)},
      {"train.clamp_logit_scale", b(c.clamp_logit_scale)},
      {"train.epochs", u(c.epochs)},
      {"train.loss_aggregation", c.loss_aggregation},
      {"train.lr", format_double(c.lr)},
      {"train.optimizer", c.optimizer},
      {"train.seed", std::to_string(c.seed)},
      {"train.spectrum_enabled", b(c.spectrum_enabled)},
  };
}

inline std::string serialize_config(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_items(c)) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

/// Applies one key/value pair; throws UsageError on unknown keys so typos in
/// config files or --set flags never pass silently.
inline void apply_config_entry(TrainConfig& c, const std::string& key, const std::string& value) {
  const auto set_size = [&](std::size_t& field) {
    field = static_cast<std::size_t>(parse_uint(value, key));
  };
  if (key == "model.audio_dim") set_size(c.model.audio_dim);
  else if (key == "model.audio_hidden") set_size(c.model.audio_hidden);
  else if (key == "model.embed_dim") set_size(c.model.embed_dim);
  else if (key == "model.frame_feat") set_size(c.model.frame_feat);
  else if (key == "model.grid") set_size(c.model.grid);
  else if (key == "model.max_len") set_size(c.model.max_len);
  else if (key == "model.spec_dim") set_size(c.model.spec_dim);
  else if (key == "model.spec_hidden") set_size(c.model.spec_hidden);
  else if (key == "model.text_dim") set_size(c.model.text_dim);
  else if (key == "model.vocab_size") set_size(c.model.vocab_size);
  else if (key == "stft.eps") c.stft.eps = parse_double(value, key);
  else if (key == "stft.frame_len") set_size(c.stft.frame_len);
  else if (key == "stft.hop") set_size(c.stft.hop);
  else if (key == "stft.log_compress") c.stft.log_compress = parse_bool(value, key);
  else if (key == "stft.window") c.stft.window = window_from_name(value);
  else if (key == "text.max_vocab") set_size(c.max_vocab);
  else if (key == "text.min_count") set_size(c.vocab_min_count);
  else if (key == "text.template") c.caption_template = value;
  else if (key == "train.adam_beta1") c.adam_beta1 = parse_double(value, key);
  else if (key == "train.adam_beta2") c.adam_beta2 = parse_double(value, key);
  else if (key == "train.adam_eps") c.adam_eps = parse_double(value, key);
  else if (key == "train.batch_size") set_size(c.batch_size);
  else if (key == "train.checkpoint_every") set_size(c.checkpoint_every);
  else if (key == "train.clamp_logit_scale") c.clamp_logit_scale = parse_bool(value, key);
  else if (key == "train.epochs") set_size(c.epochs);
  else if (key == "train.loss_aggregation") c.loss_aggregation = value;
  else if (key == "train.lr") c.lr = parse_double(value, key);
  else if (key == "train.optimizer") c.optimizer = value;
  else if (key == "train.seed") c.seed = parse_uint(value, key);
  else if (key == "train.spectrum_enabled") c.spectrum_enabled = parse_bool(value, key);
  else throw UsageError("unknown config key '" + key + "'");
}

/// Parses `key = value` lines on top of `base`; '#' starts a comment.
inline TrainConfig parse_config_text(const std::string& text, const std::string& origin,
                                     TrainConfig base = TrainConfig{}) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + " line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw UsageError(origin + " line " + std::to_string(line_no) + ": empty key");
    try {
      apply_config_entry(base, key, value);
    } catch (const UsageError& e) {
      throw UsageError(origin + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

}  // namespace muser
