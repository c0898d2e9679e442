#pragma once

// Evaluation: zero-shot classification through class-filled text prompts,
// macro ROC-AUC / average precision with exact tie handling, the template
// ablation harness, and the few-shot fine-tuning sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "muser/common.hpp"
#include "muser/data.hpp"
#include "muser/encoders.hpp"
#include "muser/matrix.hpp"
#include "muser/text.hpp"
#include "muser/training.hpp"

namespace muser {

// ---------------------------------------------------------------------------
// Core metrics
// ---------------------------------------------------------------------------

inline double accuracy(const std::vector<std::size_t>& preds,
                       const std::vector<std::size_t>& labels) {
  if (preds.size() != labels.size())
    throw Error("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                std::to_string(labels.size()) + " labels");
  if (preds.empty()) throw Error("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

namespace detail {

inline void check_binary_column(const std::vector<double>& labels, const char* what) {
  for (double v : labels)
    if (v != 0.0 && v != 1.0) throw Error(std::string(what) + ": labels must be 0 or 1");
}

}  // namespace detail

/// Mann-Whitney AUC for one column via midranks; ties get half credit.
inline double auc_column(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size() || scores.empty()) throw Error("auc_column: bad input");
  detail::check_binary_column(labels, "auc_column");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k] == 1.0) {
      pos_rank_sum += rank[k];
      ++pos;
    }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw Error("auc_column: need both classes present");
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

/// Average precision for one column: stable descending sort (ties keep
/// original order), AP = sum over ranks of (recall step) * (precision).
inline double ap_column(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size() || scores.empty()) throw Error("ap_column: bad input");
  detail::check_binary_column(labels, "ap_column");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t total_pos = 0;
  for (double v : labels)
    if (v == 1.0) ++total_pos;
  if (total_pos == 0 || total_pos == n) throw Error("ap_column: need both classes present");
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[order[k]] == 1.0) {
      ++hits;
      const double precision = static_cast<double>(hits) / static_cast<double>(k + 1);
      ap += precision / static_cast<double>(total_pos);
    }
  }
  return ap;
}

/// Macro average over columns; columns lacking a positive or a negative are
/// excluded and reported, never silently dropped.
struct MacroMetric {
  double macro = 0.0;
  std::vector<std::size_t> valid_columns;
  std::vector<double> per_column;  // aligned with valid_columns
  std::vector<std::size_t> excluded_columns;
};

namespace detail {

template <typename ColumnFn>
inline MacroMetric macro_over_columns(const Matrix& scores, const Matrix& labels,
                                      const char* what, ColumnFn column_metric) {
  if (!scores.same_shape(labels))
    throw Error(std::string(what) + ": scores " + shape_str(scores) + " vs labels " +
                shape_str(labels));
  if (scores.rows == 0 || scores.cols == 0) throw Error(std::string(what) + ": empty input");
  MacroMetric result;
  for (std::size_t c = 0; c < scores.cols; ++c) {
    std::vector<double> s(scores.rows), y(scores.rows);
    std::size_t pos = 0;
    for (std::size_t r = 0; r < scores.rows; ++r) {
      s[r] = scores(r, c);
      y[r] = labels(r, c);
      if (y[r] != 0.0 && y[r] != 1.0)
        throw Error(std::string(what) + ": labels must be 0 or 1");
      if (y[r] == 1.0) ++pos;
    }
    if (pos == 0 || pos == scores.rows) {
      result.excluded_columns.push_back(c);
      continue;
    }
    result.valid_columns.push_back(c);
    result.per_column.push_back(column_metric(s, y));
  }
  if (result.valid_columns.empty())
    throw DataError(std::string(what) + ": no column has both classes present");
  double sum = 0.0;
  for (double v : result.per_column) sum += v;
  result.macro = sum / static_cast<double>(result.per_column.size());
  return result;
}

}  // namespace detail

inline MacroMetric roc_auc_macro(const Matrix& scores, const Matrix& labels) {
  return detail::macro_over_columns(scores, labels, "roc_auc_macro", auc_column);
}

inline MacroMetric average_precision_macro(const Matrix& scores, const Matrix& labels) {
  return detail::macro_over_columns(scores, labels, "average_precision_macro", ap_column);
}

// ---------------------------------------------------------------------------
// Zero-shot classification
// ---------------------------------------------------------------------------

struct ZeroShotResult {
  std::size_t cls = 0;
  std::vector<double> scores;
};

/// Dot products against every prompt row; argmax with lowest-index tie-break.
inline ZeroShotResult zero_shot_classify(const Matrix& emb, const Matrix& prompt_embs) {
  if (prompt_embs.rows == 0) throw Error("zero_shot_classify: no prompt classes");
  if (emb.rows != 1 || emb.cols != prompt_embs.cols)
    throw Error("zero_shot_classify: embedding " + shape_str(emb) + " vs prompts " +
                shape_str(prompt_embs));
  ZeroShotResult result;
  result.scores.resize(prompt_embs.rows);
  for (std::size_t c = 0; c < prompt_embs.rows; ++c) {
    double dot = 0.0;
    for (std::size_t j = 0; j < prompt_embs.cols; ++j) dot += prompt_embs(c, j) * emb(0, j);
    result.scores[c] = dot;
  }
  result.cls = 0;
  for (std::size_t c = 1; c < result.scores.size(); ++c)
    if (result.scores[c] > result.scores[result.cls]) result.cls = c;
  return result;
}

// ---------------------------------------------------------------------------
// Prompt field derivation and templates-vs-no-template
// ---------------------------------------------------------------------------

namespace detail {

/// Most frequent value per metadata key over a record subset; frequency ties
/// break toward the lexicographically smaller value.
inline std::map<std::string, std::string> modal_fields(
    const std::vector<const DatasetRecord*>& subset) {
  if (subset.empty()) throw DataError("modal_fields: empty record subset");
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (const DatasetRecord* rec : subset)
    for (const auto& [k, v] : rec->metadata) ++counts[k][v];
  std::map<std::string, std::string> fields;
  for (const auto& [key, values] : counts) {
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [value, count] : values) {
      if (count > best_count) {  // map order makes ties pick the smaller value
        best = &value;
        best_count = count;
      }
    }
    fields[key] = *best;
  }
  return fields;
}

}  // namespace detail

/// One field map per genre class: the modal metadata values of that class's
/// records (its own genre, its most common tag/style, ...).
inline std::vector<std::map<std::string, std::string>> derive_class_prompt_fields(
    const std::vector<DatasetRecord>& records, const std::vector<std::string>& classes) {
  std::vector<std::map<std::string, std::string>> out;
  out.reserve(classes.size());
  for (const std::string& cls : classes) {
    std::vector<const DatasetRecord*> subset;
    for (const DatasetRecord& rec : records) {
      auto it = rec.metadata.find("genre");
      if (it != rec.metadata.end() && it->second == cls) subset.push_back(&rec);
    }
    if (subset.empty()) throw DataError("derive_class_prompt_fields: class '" + cls +
                                        "' has no records");
    out.push_back(detail::modal_fields(subset));
  }
  return out;
}

/// One field map per tag word, from the records carrying that label. Because
/// a record's own tag/style words sit in its metadata, the modal value puts
/// the tag word itself into the right template slot.
inline std::vector<std::map<std::string, std::string>> derive_tag_prompt_fields(
    const std::vector<DatasetRecord>& records, const std::vector<std::string>& tags) {
  std::vector<std::map<std::string, std::string>> out;
  out.reserve(tags.size());
  for (const std::string& tag : tags) {
    std::vector<const DatasetRecord*> subset;
    for (const DatasetRecord& rec : records)
      if (std::find(rec.labels.begin(), rec.labels.end(), tag) != rec.labels.end())
        subset.push_back(&rec);
    if (subset.empty())
      throw DataError("derive_tag_prompt_fields: tag '" + tag + "' has no records");
    out.push_back(detail::modal_fields(subset));
  }
  return out;
}

/// A named prompt style: either a real template or the bare concatenation of
/// field values ("no template").
struct PromptStyle {
  std::string name;
  bool no_template = false;
  TemplateSpec spec;

  static PromptStyle from_template(std::string name, const std::string& text) {
    PromptStyle p;
    p.name = std::move(name);
    p.spec = TemplateSpec::parse(text);
    return p;
  }
  static PromptStyle bare(std::string name = "no-template") {
    PromptStyle p;
    p.name = std::move(name);
    p.no_template = true;
    return p;
  }
};

/// Field values joined by spaces: genre, tag, style first, remaining keys in
/// sorted order.
inline std::string render_no_template(const std::map<std::string, std::string>& fields) {
  std::vector<std::string> parts;
  for (const char* key : {"genre", "tag", "style"}) {
    auto it = fields.find(key);
    if (it != fields.end()) parts.push_back(it->second);
  }
  for (const auto& [k, v] : fields)
    if (k != "genre" && k != "tag" && k != "style") parts.push_back(v);
  std::string out;
  for (const std::string& p : parts) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

inline std::string render_prompt(const PromptStyle& style,
                                 const std::map<std::string, std::string>& fields) {
  if (style.no_template) return render_no_template(fields);
  return render_with_available_fields(style.spec, fields);
}

/// The four prompt styles exercised by the ablation harness.
inline std::vector<PromptStyle> default_ablation_set() {
  return {
      PromptStyle::bare(),
      PromptStyle::from_template("tags-for", "tags for the {genre} music is {tag}"),
      PromptStyle::from_template("characterized-by", "the {genre} music is characterized by {tag}"),
      PromptStyle::from_template("song-of", "a song of {genre}, belongs to {tag}, whose style is {style}"),
  };
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::string task;  // "genre" | "tagging"
  std::size_t n_examples = 0;

  // genre task
  double accuracy_value = 0.0;
  double accuracy_balanced = 0.0;  // unweighted mean of the per-class values
  std::vector<std::pair<std::string, double>> per_class_accuracy;

  // tagging task
  double roc_auc = 0.0;
  double ap = 0.0;
  std::vector<std::pair<std::string, double>> per_class_auc;
  std::vector<std::pair<std::string, double>> per_class_ap;
  std::vector<std::string> excluded_classes;

  /// Deterministic key=value lines; doubles carry 17 significant digits.
  std::string serialize() const {
    std::string out;
    out += "task=" + task + "\n";
    out += "n_examples=" + std::to_string(n_examples) + "\n";
    if (task == "genre") {
      out += "accuracy=" + format_double(accuracy_value) + "\n";
      out += "accuracy_balanced=" + format_double(accuracy_balanced) + "\n";
      for (const auto& [name, v] : per_class_accuracy)
        out += "class." + name + ".accuracy=" + format_double(v) + "\n";
    } else {
      out += "roc_auc_macro=" + format_double(roc_auc) + "\n";
      out += "ap_macro=" + format_double(ap) + "\n";
      for (const auto& [name, v] : per_class_auc)
        out += "class." + name + ".auc=" + format_double(v) + "\n";
      for (const auto& [name, v] : per_class_ap)
        out += "class." + name + ".ap=" + format_double(v) + "\n";
      if (!excluded_classes.empty()) {
        out += "excluded=";
        for (std::size_t i = 0; i < excluded_classes.size(); ++i) {
          if (i) out += ',';
          out += excluded_classes[i];
        }
        out += '\n';
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Zero-shot evaluation over a dataset
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix embed_dataset_audio(const std::vector<DatasetRecord>& records,
                                  const ModelState& state) {
  std::vector<Matrix> frames;
  frames.reserve(records.size());
  for (const DatasetRecord& rec : records) {
    if (!rec.has_audio) throw DataError("eval: record '" + rec.id + "' has no audio loaded");
    frames.push_back(audio_frames(rec.audio, state.config.model.frame_feat));
  }
  return embed_audio(state.params, state.config.model, frames);
}

inline Matrix embed_prompts(const std::vector<std::map<std::string, std::string>>& fields,
                            const PromptStyle& style, const ModelState& state) {
  std::vector<TokenSequence> tokens;
  tokens.reserve(fields.size());
  for (const auto& f : fields)
    tokens.push_back(tokenize(render_prompt(style, f), state.vocab, state.config.model.max_len));
  return embed_text(state.params, state.config.model, tokens);
}

}  // namespace detail

/// Genre classification: one prompt per class, argmax similarity.
inline MetricsReport eval_zero_shot_genre(const std::vector<DatasetRecord>& records,
                                          const ModelState& state, const PromptStyle& style) {
  if (records.empty()) throw DataError("eval_zero_shot_genre: empty dataset");
  const std::vector<std::string> classes = genre_classes(records);
  const Matrix prompt_embs =
      detail::embed_prompts(derive_class_prompt_fields(records, classes), style, state);
  const Matrix audio_embs = detail::embed_dataset_audio(records, state);

  std::vector<std::size_t> preds(records.size()), labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    Matrix row(1, audio_embs.cols);
    for (std::size_t j = 0; j < audio_embs.cols; ++j) row(0, j) = audio_embs(i, j);
    preds[i] = zero_shot_classify(row, prompt_embs).cls;
    labels[i] = genre_index(classes, records[i].metadata.at("genre"));
  }

  MetricsReport report;
  report.task = "genre";
  report.n_examples = records.size();
  report.accuracy_value = accuracy(preds, labels);
  double balanced_sum = 0.0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::size_t total = 0, hits = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (labels[i] != c) continue;
      ++total;
      if (preds[i] == c) ++hits;
    }
    const double v =
        total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
    report.per_class_accuracy.emplace_back(classes[c], v);
    balanced_sum += v;
  }
  report.accuracy_balanced = balanced_sum / static_cast<double>(classes.size());
  return report;
}

/// Tagging: one prompt per tag word; raw similarities are the tag scores.
inline MetricsReport eval_zero_shot_tagging(const std::vector<DatasetRecord>& records,
                                            const ModelState& state, const PromptStyle& style) {
  if (records.empty()) throw DataError("eval_zero_shot_tagging: empty dataset");
  const std::vector<std::string> tags = tag_vocabulary(records);
  if (tags.empty()) throw DataError("eval_zero_shot_tagging: dataset has no labels");
  const Matrix prompt_embs =
      detail::embed_prompts(derive_tag_prompt_fields(records, tags), style, state);
  const Matrix audio_embs = detail::embed_dataset_audio(records, state);
  const Matrix scores = matmul_nt(audio_embs, prompt_embs);
  const Matrix targets = tag_targets(records, tags);

  const MacroMetric auc = roc_auc_macro(scores, targets);
  const MacroMetric apm = average_precision_macro(scores, targets);

  MetricsReport report;
  report.task = "tagging";
  report.n_examples = records.size();
  report.roc_auc = auc.macro;
  report.ap = apm.macro;
  for (std::size_t i = 0; i < auc.valid_columns.size(); ++i)
    report.per_class_auc.emplace_back(tags[auc.valid_columns[i]], auc.per_column[i]);
  for (std::size_t i = 0; i < apm.valid_columns.size(); ++i)
    report.per_class_ap.emplace_back(tags[apm.valid_columns[i]], apm.per_column[i]);
  for (std::size_t c : auc.excluded_columns) report.excluded_classes.push_back(tags[c]);
  return report;
}

inline MetricsReport eval_zero_shot(const std::vector<DatasetRecord>& records,
                                    const ModelState& state, const PromptStyle& style,
                                    const std::string& task) {
  if (task == "genre") return eval_zero_shot_genre(records, state, style);
  if (task == "tagging") return eval_zero_shot_tagging(records, state, style);
  throw UsageError("eval: unknown task '" + task + "' (expected genre or tagging)");
}

/// Runs the same dataset and parameters through every prompt style in order.
inline std::vector<std::pair<PromptStyle, MetricsReport>> template_ablation(
    const std::vector<DatasetRecord>& records, const ModelState& state,
    const std::vector<PromptStyle>& styles, const std::string& task = "tagging") {
  if (styles.empty()) throw UsageError("template_ablation: empty template list");
  std::vector<std::pair<PromptStyle, MetricsReport>> out;
  out.reserve(styles.size());
  for (const PromptStyle& style : styles)
    out.emplace_back(style, eval_zero_shot(records, state, style, task));
  return out;
}

// ---------------------------------------------------------------------------
// Few-shot fine-tuning sweep
// ---------------------------------------------------------------------------

/// Class-stratified selection order: per-class index lists are shuffled
/// (keyed by seed and class), then interleaved round-robin, so every prefix
/// is as class-balanced as possible.
inline std::vector<std::size_t> stratified_order(const std::vector<DatasetRecord>& records,
                                                 std::uint64_t seed) {
  const std::vector<std::string> classes = genre_classes(records);
  std::vector<std::vector<std::size_t>> per_class(classes.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    per_class[genre_index(classes, records[i].metadata.at("genre"))].push_back(i);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    Rng rng(mix_seed(mix_seed(seed, 0x57a7ull), c));
    deterministic_shuffle(per_class[c], rng);
  }
  std::vector<std::size_t> order;
  order.reserve(records.size());
  for (std::size_t round = 0; order.size() < records.size(); ++round)
    for (std::size_t c = 0; c < per_class.size(); ++c)
      if (round < per_class[c].size()) order.push_back(per_class[c][round]);
  return order;
}

/// First floor(ratio * n) entries of the selection order.
inline std::vector<std::size_t> subset_at_ratio(const std::vector<std::size_t>& order,
                                                double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw UsageError("subset_at_ratio: ratio must lie in (0, 1]");
  const std::size_t take =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(order.size())));
  return std::vector<std::size_t>(order.begin(),
                                  order.begin() + static_cast<std::ptrdiff_t>(take));
}

struct FewShotPoint {
  double ratio = 0.0;
  std::size_t n_train = 0;
  bool skipped = false;  // too few examples for one batch
  MetricsReport report;
  std::vector<std::string> log;
};

/// Fine-tunes from the same base state on nested subsets and evaluates each
/// result on the fixed test split. The subset is re-sorted by original index
/// before training so the ratio-1.0 point is byte-identical to a plain
/// fine-tune on the full training split.
inline std::vector<FewShotPoint> few_shot_sweep(const ModelState& base,
                                                const TrainConfig& ft_config,
                                                std::vector<DatasetRecord>& train_records,
                                                std::vector<DatasetRecord>& test_records,
                                                const std::vector<double>& ratios,
                                                const PromptStyle& style) {
  if (ratios.empty()) throw UsageError("few_shot_sweep: no ratios");
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!(ratios[i] > 0.0 && ratios[i] <= 1.0))
      throw UsageError("few_shot_sweep: ratios must lie in (0, 1]");
    if (i > 0 && ratios[i] <= ratios[i - 1])
      throw UsageError("few_shot_sweep: ratios must be strictly ascending");
  }
  load_dataset_audio(train_records);
  load_dataset_audio(test_records);
  const std::vector<std::size_t> order = stratified_order(train_records, ft_config.seed);
  std::vector<FewShotPoint> points;
  for (double ratio : ratios) {
    std::vector<std::size_t> pick = subset_at_ratio(order, ratio);
    std::sort(pick.begin(), pick.end());
    FewShotPoint point;
    point.ratio = ratio;
    point.n_train = pick.size();
    if (pick.size() < ft_config.batch_size) {
      point.skipped = true;
      points.push_back(std::move(point));
      continue;
    }
    std::vector<DatasetRecord> subset;
    subset.reserve(pick.size());
    for (std::size_t idx : pick) subset.push_back(train_records[idx]);
    TrainOutput ft = train(ft_config, subset, &base);
    point.report = eval_zero_shot_genre(test_records, ft.state, style);
    point.log = std::move(ft.log);
    points.push_back(std::move(point));
  }
  return points;
}

}  // namespace muser
