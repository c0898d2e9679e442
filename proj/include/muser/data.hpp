#pragma once

// Dataset plumbing: PCM16 mono WAV files, line-delimited JSON metadata,
// the synthetic multi-class corpus, and the MUSERMAT matrix file format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "muser/common.hpp"
#include "muser/matrix.hpp"
#include "muser/signal.hpp"

namespace muser {

// ---------------------------------------------------------------------------
// Raw file helpers
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError("read failed: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline std::string read_file_text(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_file_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// WAV (RIFF/WAVE, PCM 16-bit, mono)
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  clip.validate();
  ByteWriter w;
  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * 2;
  w.raw("RIFF", 4);
  w.u32(36 + data_bytes);
  w.raw("WAVE", 4);
  w.raw("fmt ", 4);
  w.u32(16);
  w.u16(1);  // PCM
  w.u16(1);  // mono
  w.u32(static_cast<std::uint32_t>(clip.sample_rate_hz));
  w.u32(static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  w.u16(2);   // block align
  w.u16(16);  // bits per sample
  w.raw("data", 4);
  w.u32(data_bytes);
  for (double s : clip.samples) {
    double q = std::nearbyint(s * 32768.0);
    q = std::min(32767.0, std::max(-32768.0, q));
    w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return w.bytes();
}

inline void write_wav(const std::string& path, const AudioClip& clip) {
  write_file_bytes(path, encode_wav(clip));
}

inline AudioClip decode_wav(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  char magic[4];
  std::memcpy(magic, r.take(4).data(), 4);
  if (std::memcmp(magic, "RIFF", 4) != 0) throw DataError(origin + ": not a RIFF file");
  r.u32();  // declared riff size; trust the actual byte count instead
  std::memcpy(magic, r.take(4).data(), 4);
  if (std::memcmp(magic, "WAVE", 4) != 0) throw DataError(origin + ": not a WAVE file");

  bool have_fmt = false;
  std::uint32_t sample_rate = 0;
  AudioClip clip;
  bool have_data = false;
  while (!r.at_end()) {
    char tag[5] = {0};
    std::memcpy(tag, r.take(4).data(), 4);
    const std::uint32_t size = r.u32();
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw DataError(origin + ": fmt chunk too small");
      const std::uint16_t format = r.u16();
      const std::uint16_t channels = r.u16();
      sample_rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      const std::uint16_t bits = r.u16();
      if (format != 1) throw DataError(origin + ": only PCM supported (format tag " +
                                       std::to_string(format) + ")");
      if (channels != 1) throw DataError(origin + ": mono required (" +
                                         std::to_string(channels) + " channels)");
      if (bits != 16) throw DataError(origin + ": 16-bit samples required (" +
                                      std::to_string(bits) + " bits)");
      if (sample_rate == 0) throw DataError(origin + ": sample rate is zero");
      r.take(size - 16);  // fmt extensions, ignored
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw DataError(origin + ": data chunk before fmt chunk");
      if (size == 0) throw DataError(origin + ": empty data chunk");
      if (size % 2 != 0) throw DataError(origin + ": data chunk size is odd");
      clip.samples.reserve(size / 2);
      for (std::uint32_t i = 0; i < size / 2; ++i) {
        const std::int16_t q = static_cast<std::int16_t>(r.u16());
        clip.samples.push_back(static_cast<double>(q) / 32768.0);
      }
      have_data = true;
    } else {
      r.take(size);  // unknown chunk, skip
    }
    if (size % 2 == 1 && !r.at_end()) r.take(1);  // RIFF chunks are word-aligned
  }
  if (!have_fmt) throw DataError(origin + ": missing fmt chunk");
  if (!have_data) throw DataError(origin + ": missing data chunk");
  clip.sample_rate_hz = sample_rate;
  clip.validate();
  return clip;
}

inline AudioClip read_wav(const std::string& path) {
  return decode_wav(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// MUSERMAT matrix files
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kMatrixFormatVersion = 1;

inline std::vector<std::uint8_t> encode_matrix(const Matrix& m) {
  ByteWriter w;
  w.raw("MUSERMAT", 8);
  w.u32(kMatrixFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.rows));
  w.u32(static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) w.f64(v);
  return w.bytes();
}

inline void write_matrix(const std::string& path, const Matrix& m) {
  write_file_bytes(path, encode_matrix(m));
}

inline Matrix decode_matrix(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  if (std::memcmp(r.take(8).data(), "MUSERMAT", 8) != 0)
    throw DataError(origin + ": bad magic, not a MUSERMAT file");
  const std::uint32_t version = r.u32();
  if (version != kMatrixFormatVersion)
    throw DataError(origin + ": unsupported version " + std::to_string(version));
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  const std::size_t expect = static_cast<std::size_t>(rows) * cols * 8;
  if (r.remaining() != expect)
    throw DataError(origin + ": payload is " + std::to_string(r.remaining()) +
                    " bytes, header implies " + std::to_string(expect));
  Matrix m(rows, cols);
  for (double& v : m.data) v = r.f64();
  return m;
}

inline Matrix read_matrix(const std::string& path) {
  return decode_matrix(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Dataset records and metadata files
// ---------------------------------------------------------------------------

struct DatasetRecord {
  std::string id;
  std::string audio_path;  // resolved on load; empty for in-memory records
  std::map<std::string, std::string> metadata;
  std::vector<std::string> labels;
  AudioClip audio;
  bool has_audio = false;
};

/// One JSON object per line, keys {id, audio_path, metadata, labels}.
inline std::string encode_metadata(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const DatasetRecord& rec : records) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["audio_path"] = rec.audio_path;
    j["metadata"] = rec.metadata;
    j["labels"] = rec.labels;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Parses, validates, resolves audio paths against base_dir, sorts by id.
inline std::vector<DatasetRecord> parse_metadata(const std::string& text,
                                                 const std::string& base_dir,
                                                 const std::string& origin) {
  std::vector<DatasetRecord> records;
  std::set<std::string> seen_ids;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = origin + " line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed record: " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": record must be an object");
    DatasetRecord rec;
    for (const auto& [key, value] : j.items()) {
      if (key == "id") {
        if (!value.is_string()) throw DataError(where + ": id must be a string");
        rec.id = value.get<std::string>();
      } else if (key == "audio_path") {
        if (!value.is_string()) throw DataError(where + ": audio_path must be a string");
        rec.audio_path = value.get<std::string>();
      } else if (key == "metadata") {
        if (!value.is_object()) throw DataError(where + ": metadata must be an object");
        for (const auto& [mk, mv] : value.items()) {
          if (!mv.is_string())
            throw DataError(where + ": metadata field '" + mk + "' must be a string");
          rec.metadata[mk] = mv.get<std::string>();
        }
      } else if (key == "labels") {
        if (!value.is_array()) throw DataError(where + ": labels must be an array");
        for (const auto& lv : value) {
          if (!lv.is_string()) throw DataError(where + ": labels must be strings");
          rec.labels.push_back(lv.get<std::string>());
        }
      } else {
        throw DataError(where + ": unknown key '" + key + "'");
      }
    }
    if (rec.id.empty()) throw DataError(where + ": missing or empty id");
    if (rec.audio_path.empty()) throw DataError(where + ": missing audio_path");
    if (!seen_ids.insert(rec.id).second)
      throw DataError(where + ": duplicate id '" + rec.id + "'");
    if (!base_dir.empty()) {
      const std::filesystem::path p(rec.audio_path);
      if (p.is_relative()) rec.audio_path = (std::filesystem::path(base_dir) / p).string();
    }
    records.push_back(std::move(rec));
  }
  std::sort(records.begin(), records.end(),
            [](const DatasetRecord& a, const DatasetRecord& b) { return a.id < b.id; });
  return records;
}

inline std::vector<DatasetRecord> load_metadata(const std::string& path) {
  const std::string base = std::filesystem::path(path).parent_path().string();
  return parse_metadata(read_file_text(path), base, path);
}

inline void load_dataset_audio(std::vector<DatasetRecord>& records) {
  for (DatasetRecord& rec : records) {
    if (rec.has_audio) continue;
    rec.audio = read_wav(rec.audio_path);
    rec.has_audio = true;
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Base frequency of class k: 110 * 2^(k/2) Hz.
inline double synth_class_freq(std::size_t k) {
  return 110.0 * std::pow(2.0, static_cast<double>(k) / 2.0);
}

/// Each class is a 3-harmonic tone (amplitudes 1, 0.5, 0.25) with fresh
/// random phases per clip, Gaussian noise sigma 0.05, peak-normalized to 0.9.
/// Class-linked metadata: genre "genre_k", one of two tag words, one of two
/// style words; labels carry the tag and style words.
inline std::vector<DatasetRecord> synth_dataset(std::size_t classes, std::size_t per_class,
                                                double clip_seconds, std::size_t rate_hz,
                                                std::uint64_t seed) {
  if (classes < 2) throw UsageError("synth_dataset: need at least 2 classes");
  if (per_class < 1) throw UsageError("synth_dataset: need at least 1 clip per class");
  if (rate_hz == 0) throw UsageError("synth_dataset: sample rate must be positive");
  const std::size_t n_samples =
      static_cast<std::size_t>(std::llround(clip_seconds * static_cast<double>(rate_hz)));
  if (n_samples == 0) throw UsageError("synth_dataset: clip length rounds to zero samples");
  for (std::size_t k = 0; k < classes; ++k)
    if (synth_class_freq(k) >= static_cast<double>(rate_hz) / 2.0)
      throw UsageError("synth_dataset: class " + std::to_string(k) + " base frequency " +
                       format_double(synth_class_freq(k)) + " Hz aliases at rate " +
                       std::to_string(rate_hz));

  std::vector<DatasetRecord> records;
  records.reserve(classes * per_class);
  for (std::size_t k = 0; k < classes; ++k) {
    const double f = synth_class_freq(k);
    const std::string ks = std::to_string(k);
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(mix_seed(mix_seed(seed, 0xda7a5e7ull + k), i));
      const double phi1 = uniform_real(rng, 0.0, 2.0 * kPi);
      const double phi2 = uniform_real(rng, 0.0, 2.0 * kPi);
      const double phi3 = uniform_real(rng, 0.0, 2.0 * kPi);
      AudioClip clip;
      clip.sample_rate_hz = rate_hz;
      clip.samples.resize(n_samples);
      double peak = 0.0;
      for (std::size_t t = 0; t < n_samples; ++t) {
        const double time = static_cast<double>(t) / static_cast<double>(rate_hz);
        double s = std::sin(2.0 * kPi * f * time + phi1) +
                   0.5 * std::sin(2.0 * kPi * 2.0 * f * time + phi2) +
                   0.25 * std::sin(2.0 * kPi * 3.0 * f * time + phi3);
        s += 0.05 * normal(rng);
        clip.samples[t] = s;
        peak = std::max(peak, std::abs(s));
      }
      if (peak > 0.0)
        for (double& s : clip.samples) s *= 0.9 / peak;

      DatasetRecord rec;
      std::string num = std::to_string(i);
      while (num.size() < 3) num.insert(num.begin(), '0');
      rec.id = "c" + ks + "_" + num;
      const std::string tag = "tag" + ks + (bounded_uint(rng, 2) == 0 ? "a" : "b");
      const std::string style = "style" + ks + (bounded_uint(rng, 2) == 0 ? "a" : "b");
      rec.metadata["genre"] = "genre_" + ks;
      rec.metadata["tag"] = tag;
      rec.metadata["style"] = style;
      rec.labels = {tag, style};
      rec.audio = std::move(clip);
      rec.has_audio = true;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

/// Writes <id>.wav for every record plus metadata.jsonl; returns the
/// metadata path. Records must carry in-memory audio.
inline std::string write_dataset(const std::string& dir, std::vector<DatasetRecord>& records) {
  std::filesystem::create_directories(dir);
  for (DatasetRecord& rec : records) {
    if (!rec.has_audio) throw DataError("write_dataset: record '" + rec.id + "' has no audio");
    rec.audio_path = rec.id + ".wav";
    write_wav((std::filesystem::path(dir) / rec.audio_path).string(), rec.audio);
  }
  const std::string meta_path = (std::filesystem::path(dir) / "metadata.jsonl").string();
  write_file_text(meta_path, encode_metadata(records));
  return meta_path;
}

// ---------------------------------------------------------------------------
// Label derivation
// ---------------------------------------------------------------------------

/// Sorted unique values of metadata["genre"]; every record must have one.
inline std::vector<std::string> genre_classes(const std::vector<DatasetRecord>& records) {
  std::set<std::string> genres;
  for (const DatasetRecord& rec : records) {
    auto it = rec.metadata.find("genre");
    if (it == rec.metadata.end())
      throw DataError("genre_classes: record '" + rec.id + "' has no genre");
    genres.insert(it->second);
  }
  return std::vector<std::string>(genres.begin(), genres.end());
}

inline std::size_t genre_index(const std::vector<std::string>& classes, const std::string& g) {
  auto it = std::lower_bound(classes.begin(), classes.end(), g);
  if (it == classes.end() || *it != g) throw DataError("unknown genre '" + g + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

/// Sorted unique label words over the dataset.
inline std::vector<std::string> tag_vocabulary(const std::vector<DatasetRecord>& records) {
  std::set<std::string> tags;
  for (const DatasetRecord& rec : records)
    for (const std::string& t : rec.labels) tags.insert(t);
  return std::vector<std::string>(tags.begin(), tags.end());
}

/// N x T binary indicator matrix over the tag vocabulary.
inline Matrix tag_targets(const std::vector<DatasetRecord>& records,
                          const std::vector<std::string>& tags) {
  Matrix y(records.size(), tags.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    for (const std::string& t : records[i].labels) {
      auto it = std::lower_bound(tags.begin(), tags.end(), t);
      if (it == tags.end() || *it != t)
        throw DataError("tag_targets: record '" + records[i].id + "' has label '" + t +
                        "' outside the tag vocabulary");
      y(i, static_cast<std::size_t>(it - tags.begin())) = 1.0;
    }
  return y;
}

}  // namespace muser
