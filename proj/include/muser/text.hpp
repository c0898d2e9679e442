#pragma once

// Text supervision: {placeholder} templates that render metadata into
// sentences, a word-level vocabulary, and bracketed token sequences.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "muser/common.hpp"

namespace muser {

// ---------------------------------------------------------------------------
// Normalization: lowercase ASCII, keep [a-z0-9 space hyphen], drop the rest.
// ---------------------------------------------------------------------------

inline std::string normalize_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == ' ' || c == '-') out.push_back(c);
  }
  return out;
}

inline std::vector<std::string> split_words(std::string_view normalized) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : normalized) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

/// A text pattern with {field} placeholders. Placeholders are discovered at
/// construction; unbalanced or empty braces are rejected there.
struct TemplateSpec {
  std::string text;
  std::vector<std::string> required_fields;  // sorted, unique

  static TemplateSpec parse(const std::string& tmpl) {
    TemplateSpec spec;
    spec.text = tmpl;
    std::set<std::string> fields;
    std::size_t i = 0;
    while (i < tmpl.size()) {
      if (tmpl[i] == '}') throw Error("template: unbalanced '}' at position " + std::to_string(i));
      if (tmpl[i] == '{') {
        const std::size_t close = tmpl.find('}', i + 1);
        if (close == std::string::npos)
          throw Error("template: unbalanced '{' at position " + std::to_string(i));
        const std::string name = tmpl.substr(i + 1, close - i - 1);
        if (name.empty() || name.find('{') != std::string::npos)
          throw Error("template: empty or malformed placeholder at position " + std::to_string(i));
        fields.insert(name);
        i = close + 1;
      } else {
        ++i;
      }
    }
    spec.required_fields.assign(fields.begin(), fields.end());
    return spec;
  }

  /// Drops every comma-separated clause whose placeholders are not all in
  /// `available`. Used when a dataset lacks some metadata fields; a template
  /// without commas that references a missing field reduces to "".
  TemplateSpec reduce_for_fields(const std::set<std::string>& available) const {
    std::vector<std::string> clauses;
    std::string cur;
    for (char c : text) {
      if (c == ',') {
        clauses.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    clauses.push_back(cur);

    std::string kept;
    for (const std::string& clause : clauses) {
      const TemplateSpec sub = TemplateSpec::parse(clause);
      bool ok = true;
      for (const std::string& f : sub.required_fields)
        if (!available.count(f)) ok = false;
      if (!ok) continue;
      if (!kept.empty()) kept += ",";
      kept += clause;
    }
    // trim spaces left behind by dropped leading clauses
    const std::size_t start = kept.find_first_not_of(' ');
    kept = start == std::string::npos ? "" : kept.substr(start);
    return TemplateSpec::parse(kept);
  }
};

inline const TemplateSpec& default_template() {
  static const TemplateSpec spec =
      TemplateSpec::parse("a song of {genre}, belongs to {tag}, whose style is {style}");
  return spec;
}

/// Replaces each {name} with its value verbatim; other text is untouched.
inline std::string render_template(const TemplateSpec& spec,
                                   const std::map<std::string, std::string>& fields) {
  for (const std::string& f : spec.required_fields)
    if (!fields.count(f)) throw Error("render_template: missing field '" + f + "'");
  std::string out;
  out.reserve(spec.text.size());
  std::size_t i = 0;
  while (i < spec.text.size()) {
    if (spec.text[i] == '{') {
      const std::size_t close = spec.text.find('}', i + 1);
      const std::string name = spec.text.substr(i + 1, close - i - 1);
      out += fields.at(name);
      i = close + 1;
    } else {
      out.push_back(spec.text[i]);
      ++i;
    }
  }
  return out;
}

/// Renders after clause-dropping against the fields actually present.
inline std::string render_with_available_fields(const TemplateSpec& spec,
                                                const std::map<std::string, std::string>& fields) {
  std::set<std::string> available;
  for (const auto& [k, v] : fields) available.insert(k);
  return render_template(spec.reduce_for_fields(available), fields);
}

/// One rendered prompt per class, input order preserved.
inline std::vector<std::string> class_prompts(
    const TemplateSpec& spec, const std::vector<std::map<std::string, std::string>>& classes) {
  std::vector<std::string> out;
  out.reserve(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    try {
      out.push_back(render_template(spec, classes[i]));
    } catch (const Error& e) {
      throw Error("class_prompts: class " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocab() {
    for (const char* t : {"[PAD]", "[SOS]", "[EOS]", "[UNK]"}) append(t);
  }

  /// Word-level vocabulary over the normalized corpus. Tokens with frequency
  /// >= min_count are kept, ordered by frequency descending then
  /// lexicographic, capped at max_size ids total.
  static Vocab build(const std::vector<std::string>& corpus, std::size_t min_count,
                     std::size_t max_size = SIZE_MAX) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");
    if (min_count < 1) min_count = 1;
    std::map<std::string, std::size_t> counts;
    for (const std::string& line : corpus)
      for (const std::string& w : split_words(normalize_text(line))) ++counts[w];
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const auto& [word, count] : items) {
      if (count < min_count) continue;
      if (v.size() >= max_size) break;
      v.append(word);
    }
    return v;
  }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw Error("Vocab: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  std::size_t size() const { return tokens_.size(); }

  /// Non-reserved tokens in id order, one per line. Inverse of restore().
  std::string serialize() const {
    std::string out;
    for (std::size_t i = 4; i < tokens_.size(); ++i) {
      out += tokens_[i];
      out += '\n';
    }
    return out;
  }

  static Vocab restore(const std::string& serialized) {
    Vocab v;
    std::string cur;
    for (char c : serialized) {
      if (c == '\n') {
        if (cur.empty()) throw DataError("Vocab::restore: empty token line");
        v.append(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) throw DataError("Vocab::restore: missing trailing newline");
    return v;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void append(const std::string& token) {
    if (index_.count(token)) throw DataError("Vocab: duplicate token '" + token + "'");
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Token sequences
// ---------------------------------------------------------------------------

/// [SOS] content [EOS] [PAD]... , always padded out to max_len ids.
struct TokenSequence {
  std::vector<int> ids;
  std::size_t max_len = 0;

  std::size_t eos_pos() const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == Vocab::kEos) return i;
    throw Error("TokenSequence: no [EOS]");
  }
  std::size_t content_len() const { return eos_pos() + 1; }

  void validate() const {
    if (max_len < 3 || ids.size() != max_len) throw Error("TokenSequence: bad length");
    if (ids[0] != Vocab::kSos) throw Error("TokenSequence: must start with [SOS]");
    std::size_t eos_count = 0, eos_at = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == Vocab::kEos) {
        ++eos_count;
        eos_at = i;
      }
    }
    if (eos_count != 1) throw Error("TokenSequence: expected exactly one [EOS]");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const bool pad = ids[i] == Vocab::kPad;
      if (i > eos_at && !pad) throw Error("TokenSequence: non-pad after [EOS]");
      if (i <= eos_at && pad) throw Error("TokenSequence: pad before [EOS]");
    }
  }
};

/// Normalizes, maps words to ids (unknown -> [UNK]), truncates to
/// max_len - 2 words and brackets with [SOS]/[EOS].
inline TokenSequence tokenize(const std::string& textline, const Vocab& vocab,
                              std::size_t max_len) {
  if (max_len < 3) throw Error("tokenize: max_len must be >= 3");
  const std::vector<std::string> words = split_words(normalize_text(textline));
  TokenSequence seq;
  seq.max_len = max_len;
  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocab::kSos);
  for (std::size_t i = 0; i < words.size() && seq.ids.size() < max_len - 1; ++i)
    seq.ids.push_back(vocab.id_of(words[i]));
  seq.ids.push_back(Vocab::kEos);
  seq.ids.resize(max_len, Vocab::kPad);
  return seq;
}

/// Joins the known tokens back into normalized text (test oracle helper).
inline std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (int id : seq.ids) {
    if (id == Vocab::kSos || id == Vocab::kEos || id == Vocab::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token_of(id);
  }
  return out;
}

}  // namespace muser
