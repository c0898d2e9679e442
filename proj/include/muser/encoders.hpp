#pragma once

// The three toy encoders (audio, spectrum, text) that map a batch of inputs
// into a shared embedding space. Parameters live in a name -> Matrix map and
// are bound onto a GradTape per forward pass, so the same code path serves
// training, gradient checking, and inference.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "muser/autodiff.hpp"
#include "muser/common.hpp"
#include "muser/matrix.hpp"
#include "muser/signal.hpp"
#include "muser/text.hpp"

namespace muser {

/// Initial value of the learnable logit-scale parameter tau: ln(1 / 0.07).
inline double tau_init() { return std::log(1.0 / 0.07); }

struct ModelConfig {
  std::size_t embed_dim = 64;   // shared space dimension D
  std::size_t text_dim = 64;    // token embedding / attention width
  std::size_t audio_dim = 64;   // audio trunk width
  std::size_t audio_hidden = 128;
  std::size_t spec_dim = 64;    // spectrum trunk width
  std::size_t spec_hidden = 128;
  std::size_t grid = 4;         // pooled spectrogram is grid x grid
  std::size_t frame_feat = 256; // raw samples per audio frame
  std::size_t max_len = 32;     // token sequence length
  std::size_t vocab_size = 4;   // set after the vocabulary is built

  void validate() const {
    if (embed_dim == 0 || text_dim == 0 || audio_dim == 0 || audio_hidden == 0 ||
        spec_dim == 0 || spec_hidden == 0 || grid == 0 || frame_feat == 0)
      throw Error("ModelConfig: dimensions must be positive");
    if (max_len < 3) throw Error("ModelConfig: max_len must be >= 3");
    if (vocab_size < 4) throw Error("ModelConfig: vocab_size must be >= 4");
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class ParamKind { kWeight, kBias, kTau };

struct ParamShape {
  std::string name;
  std::size_t rows = 0, cols = 0;
  ParamKind kind = ParamKind::kWeight;
};

/// Canonical parameter list; initialization draws random values in exactly
/// this order, so checkpoints and fresh runs agree for a given seed.
inline std::vector<ParamShape> param_shapes(const ModelConfig& c) {
  c.validate();
  const auto W = [](std::string n, std::size_t r, std::size_t k) {
    return ParamShape{std::move(n), r, k, ParamKind::kWeight};
  };
  const auto B = [](std::string n, std::size_t k) {
    return ParamShape{std::move(n), 1, k, ParamKind::kBias};
  };
  std::vector<ParamShape> shapes;
  shapes.push_back(W("audio.frame_w", c.frame_feat, c.audio_dim));
  shapes.push_back(B("audio.frame_b", c.audio_dim));
  shapes.push_back(W("audio.mlp_w1", c.audio_dim, c.audio_hidden));
  shapes.push_back(B("audio.mlp_b1", c.audio_hidden));
  shapes.push_back(W("audio.mlp_w2", c.audio_hidden, c.audio_dim));
  shapes.push_back(B("audio.mlp_b2", c.audio_dim));
  shapes.push_back(W("audio.proj", c.audio_dim, c.embed_dim));
  shapes.push_back(W("spec.lift_w", c.grid, c.spec_dim));
  shapes.push_back(B("spec.lift_b", c.spec_dim));
  shapes.push_back(W("spec.mlp_w1", c.spec_dim, c.spec_hidden));
  shapes.push_back(B("spec.mlp_b1", c.spec_hidden));
  shapes.push_back(W("spec.mlp_w2", c.spec_hidden, c.spec_dim));
  shapes.push_back(B("spec.mlp_b2", c.spec_dim));
  shapes.push_back(W("spec.wq", c.spec_dim, c.spec_dim));
  shapes.push_back(W("spec.wk", c.spec_dim, c.spec_dim));
  shapes.push_back(W("spec.wv", c.spec_dim, c.spec_dim));
  shapes.push_back(W("spec.proj", c.spec_dim, c.embed_dim));
  shapes.push_back(W("text.embed", c.vocab_size, c.text_dim));
  shapes.push_back(W("text.wq", c.text_dim, c.text_dim));
  shapes.push_back(W("text.wk", c.text_dim, c.text_dim));
  shapes.push_back(W("text.wv", c.text_dim, c.text_dim));
  shapes.push_back(W("text.wo", c.text_dim, c.text_dim));
  shapes.push_back(W("text.proj", c.text_dim, c.embed_dim));
  shapes.push_back(ParamShape{"tau", 1, 1, ParamKind::kTau});
  return shapes;
}

using ParamMap = std::map<std::string, Matrix>;
using ParamVars = std::map<std::string, ad::Var>;

/// Xavier-uniform weights, small-uniform biases, tau = ln(1/0.07).
inline ParamMap init_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x9a7a3eull));
  ParamMap params;
  for (const ParamShape& s : param_shapes(config)) {
    Matrix m(s.rows, s.cols);
    switch (s.kind) {
      case ParamKind::kWeight: {
        const double a = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
        for (double& v : m.data) v = uniform_real(rng, -a, a);
        break;
      }
      case ParamKind::kBias:
        for (double& v : m.data) v = uniform_real(rng, -0.1, 0.1);
        break;
      case ParamKind::kTau:
        m.data[0] = tau_init();
        break;
    }
    params.emplace(s.name, std::move(m));
  }
  return params;
}

inline void check_param_shapes(const ModelConfig& config, const ParamMap& params) {
  const std::vector<ParamShape> shapes = param_shapes(config);
  if (params.size() != shapes.size())
    throw DataError("params: expected " + std::to_string(shapes.size()) + " tensors, have " +
                    std::to_string(params.size()));
  for (const ParamShape& s : shapes) {
    auto it = params.find(s.name);
    if (it == params.end()) throw DataError("params: missing tensor '" + s.name + "'");
    if (it->second.rows != s.rows || it->second.cols != s.cols)
      throw DataError("params: tensor '" + s.name + "' has shape " + shape_str(it->second) +
                      ", expected " + std::to_string(s.rows) + "x" + std::to_string(s.cols));
  }
}

/// Registers every parameter as a tape leaf for one forward/backward pass.
inline ParamVars bind_params(ad::GradTape& tape, const ParamMap& params) {
  ParamVars vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.input(value));
  return vars;
}

// ---------------------------------------------------------------------------
// Input featurization (plain data, no gradients)
// ---------------------------------------------------------------------------

/// Chops a clip into non-overlapping frames of frame_feat raw samples,
/// dropping the remainder. Rows are frames.
inline Matrix audio_frames(const AudioClip& clip, std::size_t frame_feat) {
  clip.validate();
  if (frame_feat == 0) throw Error("audio_frames: frame_feat must be positive");
  const std::size_t n_frames = clip.samples.size() / frame_feat;
  if (n_frames == 0)
    throw DataError("audio_frames: clip has " + std::to_string(clip.samples.size()) +
                    " samples, need at least " + std::to_string(frame_feat));
  Matrix out(n_frames, frame_feat);
  for (std::size_t t = 0; t < n_frames; ++t)
    for (std::size_t k = 0; k < frame_feat; ++k) out(t, k) = clip.samples[t * frame_feat + k];
  return out;
}

/// Average-pools a (bins x frames) magnitude matrix down to grid x grid.
/// Row = time band, column = frequency band; band edges are the floor
/// partition i*n/G.
inline Matrix pool_spectrum_grid(const Spectrum& spectrum, std::size_t grid) {
  if (grid == 0) throw Error("pool_spectrum_grid: grid must be positive");
  const std::size_t bins = spectrum.bins(), frames = spectrum.frames();
  if (bins < grid || frames < grid)
    throw DataError("pool_spectrum_grid: spectrum " + std::to_string(bins) + "x" +
                    std::to_string(frames) + " smaller than grid " + std::to_string(grid));
  Matrix out(grid, grid);
  for (std::size_t t = 0; t < grid; ++t) {
    const std::size_t t_lo = t * frames / grid, t_hi = (t + 1) * frames / grid;
    for (std::size_t f = 0; f < grid; ++f) {
      const std::size_t f_lo = f * bins / grid, f_hi = (f + 1) * bins / grid;
      double sum = 0.0;
      for (std::size_t b = f_lo; b < f_hi; ++b)
        for (std::size_t u = t_lo; u < t_hi; ++u) sum += spectrum.mags(b, u);
      out(t, f) = sum / static_cast<double>((f_hi - f_lo) * (t_hi - t_lo));
    }
  }
  return out;
}

/// Sinusoidal positional encoding, rows = positions.
inline Matrix positional_encoding(std::size_t len, std::size_t dim) {
  Matrix pe(len, dim);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * (i / 2)) /
                                                 static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Encoder forwards (batched, rows are examples, output is L2-normalized N x D)
// ---------------------------------------------------------------------------

namespace detail {

inline ad::Var pv(const ParamVars& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw Error("encoder: missing parameter '" + name + "'");
  return it->second;
}

/// tanh(x . w1 + b1) . w2 + b2
inline ad::Var mlp2(ad::GradTape& t, ad::Var x, ad::Var w1, ad::Var b1, ad::Var w2, ad::Var b2) {
  ad::Var h = t.tanh(t.add_row_broadcast(t.matmul(x, w1), b1));
  return t.add_row_broadcast(t.matmul(h, w2), b2);
}

}  // namespace detail

/// Per-frame linear map + tanh, temporal mean-pool, tanh MLP, projection.
inline ad::Var encode_audio_batch(ad::GradTape& tape, const ParamVars& vars,
                                  const ModelConfig& config,
                                  const std::vector<Matrix>& frame_mats) {
  if (frame_mats.empty()) throw Error("encode_audio_batch: empty batch");
  std::vector<ad::Var> rows;
  rows.reserve(frame_mats.size());
  for (const Matrix& frames : frame_mats) {
    if (frames.cols != config.frame_feat)
      throw DataError("encode_audio_batch: frames have " + std::to_string(frames.cols) +
                      " features, expected " + std::to_string(config.frame_feat));
    ad::Var x = tape.input(frames);
    ad::Var z = tape.tanh(tape.add_row_broadcast(
        tape.matmul(x, detail::pv(vars, "audio.frame_w")), detail::pv(vars, "audio.frame_b")));
    ad::Var pooled = tape.mean_over_rows(z);
    ad::Var h = detail::mlp2(tape, pooled, detail::pv(vars, "audio.mlp_w1"),
                             detail::pv(vars, "audio.mlp_b1"), detail::pv(vars, "audio.mlp_w2"),
                             detail::pv(vars, "audio.mlp_b2"));
    rows.push_back(tape.matmul(tape.tanh(h), detail::pv(vars, "audio.proj")));
  }
  return tape.l2_normalize_rows(tape.stack_rows(rows));
}

/// Grid rows as tokens: linear lift, tanh MLP, attention pooling with a
/// mean-pooled query, projection.
inline ad::Var encode_spectrum_batch(ad::GradTape& tape, const ParamVars& vars,
                                     const ModelConfig& config,
                                     const std::vector<Matrix>& grids) {
  if (grids.empty()) throw Error("encode_spectrum_batch: empty batch");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config.spec_dim));
  std::vector<ad::Var> rows;
  rows.reserve(grids.size());
  for (const Matrix& grid : grids) {
    if (grid.rows != config.grid || grid.cols != config.grid)
      throw DataError("encode_spectrum_batch: grid is " + shape_str(grid) + ", expected " +
                      std::to_string(config.grid) + "x" + std::to_string(config.grid));
    ad::Var x0 = tape.input(grid);
    ad::Var x = tape.add_row_broadcast(tape.matmul(x0, detail::pv(vars, "spec.lift_w")),
                                       detail::pv(vars, "spec.lift_b"));
    ad::Var h = detail::mlp2(tape, x, detail::pv(vars, "spec.mlp_w1"),
                             detail::pv(vars, "spec.mlp_b1"), detail::pv(vars, "spec.mlp_w2"),
                             detail::pv(vars, "spec.mlp_b2"));
    ad::Var q = tape.matmul(tape.mean_over_rows(h), detail::pv(vars, "spec.wq"));
    ad::Var k = tape.matmul(h, detail::pv(vars, "spec.wk"));
    ad::Var v = tape.matmul(h, detail::pv(vars, "spec.wv"));
    ad::Var attn = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), inv_sqrt_d));
    rows.push_back(tape.matmul(tape.matmul(attn, v), detail::pv(vars, "spec.proj")));
  }
  return tape.l2_normalize_rows(tape.stack_rows(rows));
}

/// Token embeddings + positional encoding, one self-attention block with a
/// residual connection, readout at the [EOS] position, projection.
inline ad::Var encode_text_batch(ad::GradTape& tape, const ParamVars& vars,
                                 const ModelConfig& config,
                                 const std::vector<TokenSequence>& batch) {
  if (batch.empty()) throw Error("encode_text_batch: empty batch");
  const Matrix pe = positional_encoding(config.max_len, config.text_dim);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config.text_dim));
  std::vector<ad::Var> rows;
  rows.reserve(batch.size());
  for (const TokenSequence& seq : batch) {
    seq.validate();
    if (seq.max_len != config.max_len)
      throw DataError("encode_text_batch: sequence length " + std::to_string(seq.max_len) +
                      " does not match configured max_len " + std::to_string(config.max_len));
    const std::size_t L = config.max_len;
    std::vector<std::size_t> ids(seq.ids.begin(), seq.ids.end());
    ad::Var x = tape.add_const(tape.gather_rows(detail::pv(vars, "text.embed"), ids), pe);
    ad::Var q = tape.matmul(x, detail::pv(vars, "text.wq"));
    ad::Var k = tape.matmul(x, detail::pv(vars, "text.wk"));
    ad::Var v = tape.matmul(x, detail::pv(vars, "text.wv"));
    Matrix mask(L, L);
    for (std::size_t j = 0; j < L; ++j) {
      if (seq.ids[j] != Vocab::kPad) continue;
      for (std::size_t i = 0; i < L; ++i) mask(i, j) = -1e9;
    }
    ad::Var scores = tape.add_const(tape.scale(tape.matmul_nt(q, k), inv_sqrt_d), mask);
    ad::Var attn = tape.matmul(tape.softmax_rows(scores), v);
    ad::Var h = tape.add(x, tape.matmul(attn, detail::pv(vars, "text.wo")));
    ad::Var readout = tape.gather_rows(h, std::vector<std::size_t>{seq.eos_pos()});
    rows.push_back(tape.matmul(readout, detail::pv(vars, "text.proj")));
  }
  return tape.l2_normalize_rows(tape.stack_rows(rows));
}

// ---------------------------------------------------------------------------
// Inference-only wrappers (same forward code path, values extracted)
// ---------------------------------------------------------------------------

inline Matrix embed_audio(const ParamMap& params, const ModelConfig& config,
                          const std::vector<Matrix>& frame_mats) {
  ad::GradTape tape;
  ParamVars vars = bind_params(tape, params);
  return tape.value(encode_audio_batch(tape, vars, config, frame_mats));
}

inline Matrix embed_spectrum(const ParamMap& params, const ModelConfig& config,
                             const std::vector<Matrix>& grids) {
  ad::GradTape tape;
  ParamVars vars = bind_params(tape, params);
  return tape.value(encode_spectrum_batch(tape, vars, config, grids));
}

inline Matrix embed_text(const ParamMap& params, const ModelConfig& config,
                         const std::vector<TokenSequence>& batch) {
  ad::GradTape tape;
  ParamVars vars = bind_params(tape, params);
  return tape.value(encode_text_batch(tape, vars, config, batch));
}

}  // namespace muser
