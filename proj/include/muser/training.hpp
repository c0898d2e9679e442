#pragma once

// Training loop: deterministic epoch batching, tape forward/backward over the
// contrastive objective, SGD/Adam updates, and MUSERCKP checkpoints that
// round-trip byte-exactly (params, optimizer state, epoch counter, RNG
// stream, vocabulary).

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "muser/autodiff.hpp"
#include "muser/common.hpp"
#include "muser/config.hpp"
#include "muser/contrastive.hpp"
#include "muser/data.hpp"
#include "muser/encoders.hpp"
#include "muser/matrix.hpp"
#include "muser/signal.hpp"
#include "muser/text.hpp"

namespace muser {

// ---------------------------------------------------------------------------
// Prepared features
// ---------------------------------------------------------------------------

/// Caption text for one record: the configured template rendered against the
/// metadata fields that exist (missing-field clauses dropped).
inline std::string build_caption(const DatasetRecord& rec, const TemplateSpec& tmpl) {
  return render_with_available_fields(tmpl, rec.metadata);
}

struct PreparedExample {
  Matrix frames;        // audio frames, T x frame_feat
  Matrix grid;          // pooled spectrogram, grid x grid (0x0 when unused)
  TokenSequence tokens;
};

struct PreparedDataset {
  std::vector<PreparedExample> examples;
  std::vector<std::string> captions;
};

/// Precomputes every per-example feature once; training batches then only
/// index into this. Records must carry audio.
inline PreparedDataset prepare_dataset(const std::vector<DatasetRecord>& records,
                                       const TrainConfig& config, const Vocab& vocab,
                                       bool need_spectrum) {
  const TemplateSpec tmpl = TemplateSpec::parse(config.caption_template);
  PreparedDataset prep;
  prep.examples.reserve(records.size());
  prep.captions.reserve(records.size());
  for (const DatasetRecord& rec : records) {
    if (!rec.has_audio)
      throw DataError("prepare_dataset: record '" + rec.id + "' has no audio loaded");
    PreparedExample ex;
    ex.frames = audio_frames(rec.audio, config.model.frame_feat);
    if (need_spectrum)
      ex.grid = pool_spectrum_grid(stft(rec.audio, config.stft), config.model.grid);
    const std::string caption = build_caption(rec, tmpl);
    ex.tokens = tokenize(caption, vocab, config.model.max_len);
    prep.captions.push_back(caption);
    prep.examples.push_back(std::move(ex));
  }
  return prep;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Deterministic shuffle of [0, n) keyed by (seed, epoch), cut into full
/// batches; the remainder is dropped.
inline std::vector<std::vector<std::size_t>> make_batch_indices(std::size_t n,
                                                                std::size_t batch_size,
                                                                std::uint64_t seed,
                                                                std::uint64_t epoch) {
  if (batch_size == 0) throw UsageError("make_batch_indices: batch_size must be positive");
  if (n < batch_size)
    throw DataError("make_batch_indices: dataset has " + std::to_string(n) +
                    " records, need at least " + std::to_string(batch_size));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(mix_seed(seed, 0xba7c4e5ull), epoch));
  deterministic_shuffle(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start + batch_size <= n; start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  return batches;
}

/// The epoch shuffle itself, for replay-style assertions.
inline std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed,
                                              std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(mix_seed(seed, 0xba7c4e5ull), epoch));
  deterministic_shuffle(order, rng);
  return order;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
  std::map<std::string, Matrix> adam_m;
  std::map<std::string, Matrix> adam_v;
  std::uint64_t step = 0;
};

/// One update over every (param, grad) pair. SGD: p -= lr*g. Adam: standard
/// bias-corrected moments. Non-finite gradients abort with the tensor name.
inline void optimizer_step(ParamMap& params, const std::map<std::string, Matrix>& grads,
                           OptimizerState& state, const TrainConfig& config) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end())
      throw Error("optimizer_step: gradient for unknown parameter '" + name + "'");
    if (!it->second.same_shape(g))
      throw Error("optimizer_step: gradient shape mismatch for '" + name + "'");
    for (double v : g.data)
      if (!std::isfinite(v))
        throw NumericError("optimizer_step: non-finite gradient for '" + name + "'");
  }
  if (config.optimizer == "sgd") {
    for (const auto& [name, g] : grads) {
      Matrix& p = params.at(name);
      for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= config.lr * g.data[i];
    }
    state.step += 1;
    return;
  }
  // Adam
  state.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    Matrix& m = state.adam_m.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    Matrix& v = state.adam_v.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      m.data[i] = b1 * m.data[i] + (1.0 - b1) * g.data[i];
      v.data[i] = b2 * v.data[i] + (1.0 - b2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= config.lr * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Model state (everything a checkpoint carries)
// ---------------------------------------------------------------------------

struct ModelState {
  TrainConfig config;  // snapshot, including the resolved vocab size
  ParamMap params;
  OptimizerState opt;
  std::uint64_t epochs_done = 0;
  Rng rng{0};  // training RNG stream; checkpointed so resumed runs share it
  Vocab vocab;
};

inline ModelState init_model_state(TrainConfig config, Vocab vocab) {
  config.model.vocab_size = vocab.size();
  config.validate();
  ModelState state;
  state.config = config;
  state.vocab = std::move(vocab);
  state.params = init_params(config.model, config.seed);
  state.rng = Rng(mix_seed(config.seed, 0x7a61c0ull));
  return state;
}

// ---------------------------------------------------------------------------
// One training step
// ---------------------------------------------------------------------------

struct StepResult {
  double loss = 0.0;
  std::map<std::string, Matrix> grads;
};

/// Forward + backward on one batch of prepared examples.
inline StepResult training_step(const ParamMap& params, const TrainConfig& config,
                                const PreparedDataset& prep,
                                const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw Error("training_step: empty batch");
  std::vector<Matrix> frames, grids;
  std::vector<TokenSequence> tokens;
  frames.reserve(batch.size());
  tokens.reserve(batch.size());
  for (std::size_t idx : batch) {
    if (idx >= prep.examples.size()) throw Error("training_step: batch index out of range");
    const PreparedExample& ex = prep.examples[idx];
    frames.push_back(ex.frames);
    tokens.push_back(ex.tokens);
    if (config.spectrum_enabled) {
      if (ex.grid.rows == 0)
        throw DataError("training_step: spectrum enabled but example has no grid");
      grids.push_back(ex.grid);
    }
  }
  ad::GradTape tape;
  ParamVars vars = bind_params(tape, params);
  ad::Var ea = encode_audio_batch(tape, vars, config.model, frames);
  ad::Var et = encode_text_batch(tape, vars, config.model, tokens);
  std::optional<ad::Var> es;
  if (config.spectrum_enabled) es = encode_spectrum_batch(tape, vars, config.model, grids);
  ad::Var loss = contrastive_loss(tape, ea, et, es, vars.at("tau"));
  if (config.loss_aggregation == "sum")
    loss = tape.scale(loss, static_cast<double>(batch.size()));
  StepResult result;
  result.loss = tape.value(loss)(0, 0);
  if (!std::isfinite(result.loss)) throw NumericError("training_step: non-finite loss");
  tape.backward(loss);
  for (const auto& [name, var] : vars) result.grads.emplace(name, tape.grad(var));
  return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Runs epochs state.epochs_done+1 .. config.epochs, appending log lines
/// "epoch,batch,loss" per batch and "epoch,mean,loss" per epoch. Doubles are
/// written with 17 significant digits, so logs are bit-faithful.
inline std::vector<std::string> run_training(
    ModelState& state, const PreparedDataset& prep,
    const std::function<void(const ModelState&)>& on_epoch_end = {}) {
  const TrainConfig& config = state.config;
  const std::size_t n = prep.examples.size();
  if (n < config.batch_size)
    throw DataError("train: dataset has " + std::to_string(n) + " examples, need at least " +
                    std::to_string(config.batch_size) + " for one batch");
  if (state.epochs_done >= config.epochs)
    throw UsageError("train: checkpoint already at epoch " + std::to_string(state.epochs_done) +
                     " of " + std::to_string(config.epochs));
  const double tau_cap = std::log(100.0);
  std::vector<std::string> log;
  for (std::uint64_t epoch = state.epochs_done + 1; epoch <= config.epochs; ++epoch) {
    const std::vector<std::vector<std::size_t>> batches =
        make_batch_indices(n, config.batch_size, config.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      StepResult step;
      try {
        step = training_step(state.params, config, prep, batches[b]);
        optimizer_step(state.params, step.grads, state.opt, config);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                           ": " + e.what());
      }
      if (config.clamp_logit_scale) {
        double& tau = state.params.at("tau").data[0];
        tau = std::min(tau_cap, std::max(-tau_cap, tau));
      }
      loss_sum += step.loss;
      log.push_back(std::to_string(epoch) + "," + std::to_string(b) + "," +
                    format_double(step.loss));
    }
    const double mean = loss_sum / static_cast<double>(batches.size());
    log.push_back(std::to_string(epoch) + ",mean," + format_double(mean));
    state.epochs_done = epoch;
    if (on_epoch_end) on_epoch_end(state);
  }
  return log;
}

struct TrainOutput {
  ModelState state;
  std::vector<std::string> log;
};

/// Fresh training run; with `warm_start`, parameters and the vocabulary are
/// copied from it (the fine-tune regime) while epochs and optimizer state
/// start over.
inline TrainOutput train(TrainConfig config, std::vector<DatasetRecord>& records,
                         const ModelState* warm_start = nullptr,
                         const std::function<void(const ModelState&)>& on_epoch_end = {}) {
  config.validate();
  if (records.empty()) throw DataError("train: empty dataset");
  load_dataset_audio(records);
  Vocab vocab;
  if (warm_start != nullptr) {
    vocab = warm_start->vocab;
  } else {
    const TemplateSpec tmpl = TemplateSpec::parse(config.caption_template);
    std::vector<std::string> captions;
    captions.reserve(records.size());
    for (const DatasetRecord& rec : records) captions.push_back(build_caption(rec, tmpl));
    vocab = Vocab::build(captions, config.vocab_min_count, config.max_vocab);
  }
  ModelState state = init_model_state(config, vocab);
  if (warm_start != nullptr) {
    ModelConfig expect = warm_start->config.model;
    expect.vocab_size = state.config.model.vocab_size;
    if (!(expect == state.config.model))
      throw UsageError("train: warm-start checkpoint has different model dimensions");
    check_param_shapes(state.config.model, warm_start->params);
    state.params = warm_start->params;
  }
  PreparedDataset prep =
      prepare_dataset(records, state.config, state.vocab, state.config.spectrum_enabled);
  TrainOutput out;
  out.log = run_training(state, prep, on_epoch_end);
  out.state = std::move(state);
  return out;
}

/// Exact continuation of an interrupted run: optimizer state, epoch counter,
/// and RNG stream all come from the checkpoint.
inline TrainOutput resume(ModelState state, std::vector<DatasetRecord>& records,
                          const std::function<void(const ModelState&)>& on_epoch_end = {}) {
  state.config.validate();
  if (records.empty()) throw DataError("resume: empty dataset");
  load_dataset_audio(records);
  PreparedDataset prep =
      prepare_dataset(records, state.config, state.vocab, state.config.spectrum_enabled);
  TrainOutput out;
  out.log = run_training(state, prep, on_epoch_end);
  out.state = std::move(state);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints (MUSERCKP)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline constexpr std::uint8_t kDtypeF64 = 1;
inline constexpr std::uint8_t kDtypeU64 = 2;
inline constexpr std::uint8_t kDtypeU8 = 3;

inline void write_tensor_header(ByteWriter& w, const std::string& name, std::uint8_t dtype,
                                const std::vector<std::uint32_t>& dims) {
  if (name.size() > 0xFFFF) throw Error("checkpoint: tensor name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u8(dtype);
  w.u8(static_cast<std::uint8_t>(dims.size()));
  for (std::uint32_t d : dims) w.u32(d);
}

inline void write_matrix_tensor(ByteWriter& w, const std::string& name, const Matrix& m) {
  write_tensor_header(w, name, kDtypeF64,
                      {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)});
  for (double v : m.data) w.f64(v);
}

inline void write_u64_tensor(ByteWriter& w, const std::string& name, std::uint64_t v) {
  write_tensor_header(w, name, kDtypeU64, {1});
  w.u64(v);
}

inline void write_blob_tensor(ByteWriter& w, const std::string& name, const std::string& blob) {
  write_tensor_header(w, name, kDtypeU8, {static_cast<std::uint32_t>(blob.size())});
  w.raw(blob.data(), blob.size());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const ModelState& state) {
  ByteWriter w;
  w.raw("MUSERCKP", 8);
  w.u32(kCheckpointVersion);
  const std::string config_text = serialize_config(state.config);
  w.u32(static_cast<std::uint32_t>(config_text.size()));
  w.raw(config_text.data(), config_text.size());
  for (const auto& [name, m] : state.params) detail::write_matrix_tensor(w, name, m);
  for (const auto& [name, m] : state.opt.adam_m)
    detail::write_matrix_tensor(w, "opt.adam.m." + name, m);
  for (const auto& [name, m] : state.opt.adam_v)
    detail::write_matrix_tensor(w, "opt.adam.v." + name, m);
  detail::write_u64_tensor(w, "opt.step", state.opt.step);
  detail::write_u64_tensor(w, "state.epoch", state.epochs_done);
  detail::write_blob_tensor(w, "state.rng", rng_to_string(state.rng));
  detail::write_blob_tensor(w, "state.vocab", state.vocab.serialize());
  return w.bytes();
}

inline void save_checkpoint(const std::string& path, const ModelState& state) {
  write_file_bytes(path, encode_checkpoint(state));
}

inline ModelState decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                    const std::string& origin) {
  ByteReader r(bytes, origin);
  if (std::memcmp(r.take(8).data(), "MUSERCKP", 8) != 0)
    throw DataError(origin + ": bad magic, not a MUSERCKP file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(origin + ": unsupported version " + std::to_string(version));
  const std::uint32_t config_len = r.u32();
  const std::string config_text = r.str(config_len);
  ModelState state;
  try {
    state.config = parse_config_text(config_text, origin + " config blob");
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }

  bool have_step = false, have_epoch = false, have_rng = false, have_vocab = false;
  while (!r.at_end()) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const std::uint8_t dtype = r.u8();
    const std::uint8_t rank = r.u8();
    if (rank > 4) throw DataError(origin + ": tensor '" + name + "' has absurd rank");
    std::vector<std::uint32_t> dims(rank);
    std::uint64_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      dims[i] = r.u32();
      count *= dims[i];
      if (count > (1ull << 32)) throw DataError(origin + ": tensor '" + name + "' too large");
    }
    if (dtype == detail::kDtypeF64) {
      if (rank != 2) throw DataError(origin + ": tensor '" + name + "' must be rank 2");
      Matrix m(dims[0], dims[1]);
      for (double& v : m.data) v = r.f64();
      if (name.starts_with("opt.adam.m."))
        state.opt.adam_m.emplace(name.substr(11), std::move(m));
      else if (name.starts_with("opt.adam.v."))
        state.opt.adam_v.emplace(name.substr(11), std::move(m));
      else if (!state.params.emplace(name, std::move(m)).second)
        throw DataError(origin + ": duplicate tensor '" + name + "'");
    } else if (dtype == detail::kDtypeU64) {
      if (rank != 1 || dims[0] != 1)
        throw DataError(origin + ": tensor '" + name + "' must be a single u64");
      const std::uint64_t v = r.u64();
      if (name == "opt.step") {
        state.opt.step = v;
        have_step = true;
      } else if (name == "state.epoch") {
        state.epochs_done = v;
        have_epoch = true;
      } else {
        throw DataError(origin + ": unknown u64 tensor '" + name + "'");
      }
    } else if (dtype == detail::kDtypeU8) {
      if (rank != 1) throw DataError(origin + ": blob '" + name + "' must be rank 1");
      const std::string blob = r.str(dims[0]);
      if (name == "state.rng") {
        state.rng = rng_from_string(blob);
        have_rng = true;
      } else if (name == "state.vocab") {
        state.vocab = Vocab::restore(blob);
        have_vocab = true;
      } else {
        throw DataError(origin + ": unknown blob tensor '" + name + "'");
      }
    } else {
      throw DataError(origin + ": tensor '" + name + "' has unknown dtype " +
                      std::to_string(dtype));
    }
  }

  if (!have_step) throw DataError(origin + ": missing tensor 'opt.step'");
  if (!have_epoch) throw DataError(origin + ": missing tensor 'state.epoch'");
  if (!have_rng) throw DataError(origin + ": missing tensor 'state.rng'");
  if (!have_vocab) throw DataError(origin + ": missing tensor 'state.vocab'");
  check_param_shapes(state.config.model, state.params);
  if (state.vocab.size() != state.config.model.vocab_size)
    throw DataError(origin + ": vocabulary has " + std::to_string(state.vocab.size()) +
                    " tokens, config says " + std::to_string(state.config.model.vocab_size));
  for (const auto* moments : {&state.opt.adam_m, &state.opt.adam_v}) {
    for (const auto& [name, m] : *moments) {
      auto it = state.params.find(name);
      if (it == state.params.end() || !it->second.same_shape(m))
        throw DataError(origin + ": optimizer moment for unknown or mismatched tensor '" + name +
                        "'");
    }
  }
  return state;
}

inline ModelState load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path), path);
}

}  // namespace muser
