#pragma once

// Waveform container and the short-time Fourier transform that derives the
// spectrum modality. dft_magnitude is the O(n^2) definitional form and serves
// as the oracle for the radix-2 fft_magnitude fast path.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "muser/common.hpp"
#include "muser/matrix.hpp"

namespace muser {

inline constexpr double kPi = 3.14159265358979323846;

struct AudioClip {
  std::vector<double> samples;  // mono, in [-1, 1]
  std::uint32_t sample_rate_hz = 0;

  void validate() const {
    if (samples.empty()) throw DataError("AudioClip: empty sample buffer");
    if (sample_rate_hz == 0) throw DataError("AudioClip: sample rate must be positive");
    for (double s : samples) {
      if (!std::isfinite(s)) throw DataError("AudioClip: non-finite sample");
      if (std::abs(s) > 1.0 + 1e-6) throw DataError("AudioClip: sample out of [-1, 1]");
    }
  }
};

enum class Window { kHann, kRect };

struct StftParams {
  std::size_t frame_len = 512;  // power of two
  std::size_t hop = 256;
  Window window = Window::kHann;
  bool log_compress = true;
  double eps = 1e-6;

  bool operator==(const StftParams&) const = default;
};

/// Magnitude time-frequency matrix: frame_len/2+1 bins x frames.
struct Spectrum {
  Matrix mags;
  std::size_t frame_len = 0;
  std::size_t hop = 0;
  bool log_compressed = false;

  std::size_t bins() const { return mags.rows; }
  std::size_t frames() const { return mags.cols; }
};

/// Periodic Hann: w[k] = 0.5 * (1 - cos(2 pi k / n)).
inline std::vector<double> hann_window(std::size_t n) {
  if (n < 2) throw Error("hann_window: need n >= 2");
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = 0.5 * (1.0 - std::cos(2.0 * kPi * k / n));
  return w;
}

/// |DFT| by the O(n^2) definition, bins 0..n/2. Twiddles come from a
/// precomputed unit-circle table indexed by (j*k) mod n, so there is no
/// phase-accumulation drift.
inline std::vector<double> dft_magnitude(std::span<const double> frame) {
  const std::size_t n = frame.size();
  if (n < 2) throw Error("dft_magnitude: need n >= 2");
  std::vector<double> cs(n), sn(n);
  for (std::size_t t = 0; t < n; ++t) {
    cs[t] = std::cos(2.0 * kPi * t / n);
    sn[t] = std::sin(2.0 * kPi * t / n);
  }
  std::vector<double> out(n / 2 + 1);
  for (std::size_t j = 0; j <= n / 2; ++j) {
    double re = 0.0, im = 0.0;
    std::size_t idx = 0;
    for (std::size_t k = 0; k < n; ++k) {
      re += frame[k] * cs[idx];
      im -= frame[k] * sn[idx];
      idx += j;
      if (idx >= n) idx -= n;
    }
    out[j] = std::hypot(re, im);
  }
  return out;
}

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n >= 1 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT over interleaved complex data.
inline void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const double wr = std::cos(ang * static_cast<double>(k));
        const double wi = std::sin(ang * static_cast<double>(k));
        const std::size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

}  // namespace detail

/// Fast path for dft_magnitude; requires a power-of-two frame length and
/// agrees with the definitional form to 1e-9 per bin.
inline std::vector<double> fft_magnitude(std::span<const double> frame) {
  const std::size_t n = frame.size();
  if (n < 2 || !detail::is_power_of_two(n))
    throw Error("fft_magnitude: frame length must be a power of two >= 2, got " +
                std::to_string(n));
  std::vector<double> re(frame.begin(), frame.end());
  std::vector<double> im(n, 0.0);
  detail::fft_radix2(re, im);
  std::vector<double> out(n / 2 + 1);
  for (std::size_t j = 0; j <= n / 2; ++j) out[j] = std::hypot(re[j], im[j]);
  return out;
}

/// Windowed framewise magnitude spectrum. Column t covers samples
/// [t*hop, t*hop + frame_len); frame count is floor((L - frame_len)/hop) + 1.
inline Spectrum stft(const AudioClip& clip, const StftParams& p) {
  clip.validate();
  if (!detail::is_power_of_two(p.frame_len) || p.frame_len < 2)
    throw Error("stft: frame_len must be a power of two >= 2, got " + std::to_string(p.frame_len));
  if (p.hop < 1 || p.hop > p.frame_len)
    throw Error("stft: hop must lie in [1, frame_len], got " + std::to_string(p.hop));
  if (clip.samples.size() < p.frame_len)
    throw DataError("stft: clip has " + std::to_string(clip.samples.size()) +
                    " samples, shorter than frame_len " + std::to_string(p.frame_len));
  if (p.log_compress && p.eps <= 0.0) throw Error("stft: log compression needs eps > 0");

  const std::size_t n_frames = (clip.samples.size() - p.frame_len) / p.hop + 1;
  const std::size_t n_bins = p.frame_len / 2 + 1;
  std::vector<double> window;
  if (p.window == Window::kHann) window = hann_window(p.frame_len);

  Spectrum spec;
  spec.mags = Matrix(n_bins, n_frames);
  spec.frame_len = p.frame_len;
  spec.hop = p.hop;
  spec.log_compressed = p.log_compress;

  std::vector<double> frame(p.frame_len);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const double* src = clip.samples.data() + t * p.hop;
    if (p.window == Window::kHann) {
      for (std::size_t k = 0; k < p.frame_len; ++k) frame[k] = src[k] * window[k];
    } else {
      for (std::size_t k = 0; k < p.frame_len; ++k) frame[k] = src[k];
    }
    const std::vector<double> mags = fft_magnitude(frame);
    for (std::size_t b = 0; b < n_bins; ++b)
      spec.mags(b, t) = p.log_compress ? std::log(mags[b] + p.eps) : mags[b];
  }
  ensure_finite(spec.mags, "stft");
  return spec;
}

}  // namespace muser
