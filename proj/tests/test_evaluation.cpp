// Evaluation stack: ranking metrics against brute-force oracles, zero-shot
// prompt classification, the template ablation harness, and the stratified
// few-shot sweep.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "testutil.hpp"

using muser::DatasetRecord;
using muser::Matrix;
using muser::PromptStyle;
using Catch::Approx;

namespace {

// O(P*N) pairwise Mann-Whitney count: correct pairs plus half credit for ties.
double auc_oracle(const std::vector<double>& s, const std::vector<double>& y) {
  double num = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) continue;
    ++pos;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) continue;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  for (double v : y)
    if (v == 0.0) ++neg;
  return num / (double(pos) * double(neg));
}

// Definitional AP via pairwise rank counting under a stable descending sort:
// rank(i) counts strictly higher scores plus equal scores at earlier indices.
double ap_oracle(const std::vector<double>& s, const std::vector<double>& y) {
  std::size_t total_pos = 0;
  for (double v : y)
    if (v == 1.0) ++total_pos;
  double ap = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) continue;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j == i) continue;
      const bool before = s[j] > s[i] || (s[j] == s[i] && j < i);
      if (!before) continue;
      ++rank;
      if (y[j] == 1.0) ++hits;
    }
    ap += double(hits) / double(rank) / double(total_pos);
  }
  return ap;
}

// Random score/label column with deliberate ties (scores on a small grid).
void random_column(muser::Rng& rng, std::size_t n, std::vector<double>& s,
                   std::vector<double>& y) {
  s.resize(n);
  y.resize(n);
  while (true) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = double(muser::bounded_uint(rng, 13)) / 4.0;
      y[i] = double(muser::bounded_uint(rng, 2));
      pos += y[i] == 1.0 ? 1 : 0;
    }
    if (pos > 0 && pos < n) return;  // both classes present
  }
}

DatasetRecord make_record(const std::string& id, const std::string& genre,
                          std::vector<std::string> labels) {
  DatasetRecord rec;
  rec.id = id;
  rec.metadata["genre"] = genre;
  for (const std::string& l : labels) rec.metadata[l.substr(0, l.size() - 1)] = l;
  rec.labels = std::move(labels);
  return rec;
}

muser::ModelState untrained_state(std::vector<DatasetRecord>& records) {
  muser::TrainConfig c = testutil::tiny_train();
  std::vector<std::string> captions;
  for (const DatasetRecord& rec : records)
    captions.push_back(muser::build_caption(rec, muser::default_template()));
  return muser::init_model_state(c, muser::Vocab::build(captions, 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

TEST_CASE("accuracy counts exact matches") {
  REQUIRE(muser::accuracy({1, 0, 2, 1}, {1, 1, 2, 0}) == 0.5);
  REQUIRE(muser::accuracy({3}, {3}) == 1.0);
  REQUIRE_THROWS_AS(muser::accuracy({1}, {1, 2}), muser::Error);
  REQUIRE_THROWS_AS(muser::accuracy({}, {}), muser::Error);
}

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

TEST_CASE("ROC-AUC matches hand-computed cases") {
  REQUIRE(muser::auc_column({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
  REQUIRE(muser::auc_column({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  REQUIRE(muser::auc_column({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  // ties earn exactly half credit
  REQUIRE(muser::auc_column({1, 1, 0, 0}, {1, 0, 1, 0}) == 0.5);
  REQUIRE(muser::auc_column({5, 5, 5, 5}, {1, 0, 1, 0}) == 0.5);
}

TEST_CASE("ROC-AUC equals the pairwise count on random tied data") {
  muser::Rng rng(2024);
  std::vector<double> s, y;
  for (int trial = 0; trial < 200; ++trial) {
    random_column(rng, 30, s, y);
    REQUIRE(muser::auc_column(s, y) == Approx(auc_oracle(s, y)).margin(1e-12));
  }
}

TEST_CASE("ROC-AUC is exactly invariant under monotone transforms") {
  muser::Rng rng(77);
  std::vector<double> s, y;
  random_column(rng, 40, s, y);
  const double base = muser::auc_column(s, y);
  std::vector<double> warped(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) warped[i] = std::exp(s[i]);
  REQUIRE(muser::auc_column(warped, y) == base);
  for (std::size_t i = 0; i < s.size(); ++i) warped[i] = 3.0 * s[i] - 100.0;
  REQUIRE(muser::auc_column(warped, y) == base);
}

TEST_CASE("ROC-AUC rejects degenerate input") {
  REQUIRE_THROWS_AS(muser::auc_column({}, {}), muser::Error);
  REQUIRE_THROWS_AS(muser::auc_column({1.0}, {1.0, 0.0}), muser::Error);
  REQUIRE_THROWS_AS(muser::auc_column({1.0, 2.0}, {1.0, 0.5}), muser::Error);
  REQUIRE_THROWS_AS(muser::auc_column({1.0, 2.0}, {1.0, 1.0}), muser::Error);
  REQUIRE_THROWS_AS(muser::auc_column({1.0, 2.0}, {0.0, 0.0}), muser::Error);
}

TEST_CASE("average precision matches hand-computed cases") {
  REQUIRE(muser::ap_column({0.8, 0.6, 0.4, 0.2}, {1, 0, 1, 0}) ==
          Approx((1.0 + 2.0 / 3.0) / 2.0).margin(1e-15));
  REQUIRE(muser::ap_column({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == 1.0);
  REQUIRE(muser::ap_column({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}) ==
          Approx((1.0 / 3.0 + 2.0 / 4.0) / 2.0).margin(1e-15));
}

TEST_CASE("average precision equals the definitional oracle on tied data") {
  muser::Rng rng(3030);
  std::vector<double> s, y;
  for (int trial = 0; trial < 200; ++trial) {
    random_column(rng, 25, s, y);
    REQUIRE(muser::ap_column(s, y) == Approx(ap_oracle(s, y)).margin(1e-12));
  }
}

TEST_CASE("average precision rejects degenerate input") {
  REQUIRE_THROWS_AS(muser::ap_column({1.0, 2.0}, {1.0, 1.0}), muser::Error);
  REQUIRE_THROWS_AS(muser::ap_column({1.0, 2.0}, {0.0, 0.0}), muser::Error);
  REQUIRE_THROWS_AS(muser::ap_column({1.0}, {}), muser::Error);
  REQUIRE_THROWS_AS(muser::ap_column({1.0, 2.0}, {2.0, 0.0}), muser::Error);
}

TEST_CASE("macro metrics average valid columns and report exclusions") {
  // col 0: perfect; col 1: inverted; col 2: all-negative (excluded)
  Matrix scores(4, 3);
  Matrix labels(4, 3);
  const double s0[] = {0.9, 0.8, 0.2, 0.1}, y0[] = {1, 1, 0, 0};
  for (std::size_t r = 0; r < 4; ++r) {
    scores(r, 0) = s0[r];
    labels(r, 0) = y0[r];
    scores(r, 1) = s0[r];
    labels(r, 1) = 1.0 - y0[r];
    scores(r, 2) = s0[r];
    labels(r, 2) = 0.0;
  }
  muser::MacroMetric auc = muser::roc_auc_macro(scores, labels);
  REQUIRE(auc.valid_columns == std::vector<std::size_t>{0, 1});
  REQUIRE(auc.excluded_columns == std::vector<std::size_t>{2});
  REQUIRE(auc.per_column[0] == 1.0);
  REQUIRE(auc.per_column[1] == 0.0);
  REQUIRE(auc.macro == 0.5);

  muser::MacroMetric ap = muser::average_precision_macro(scores, labels);
  REQUIRE(ap.valid_columns.size() == 2);
  REQUIRE(ap.macro == Approx((1.0 + (1.0 / 3.0 + 2.0 / 4.0) / 2.0) / 2.0).margin(1e-15));

  // every column degenerate -> hard failure, not a silent zero
  Matrix all_zero(4, 2);
  Matrix zl(4, 2);
  REQUIRE_THROWS_AS(muser::roc_auc_macro(all_zero, zl), muser::DataError);
  REQUIRE_THROWS_AS(muser::roc_auc_macro(scores, Matrix(3, 3)), muser::Error);
  Matrix bad_labels = labels;
  bad_labels(0, 0) = 0.25;
  REQUIRE_THROWS_AS(muser::roc_auc_macro(scores, bad_labels), muser::Error);
}

TEST_CASE("macro metrics agree with per-column calls") {
  Matrix scores = testutil::random_matrix(20, 4, 99, -1.0, 1.0);
  Matrix labels(20, 4);
  muser::Rng rng(5);
  for (std::size_t c = 0; c < 4; ++c) {
    labels(0, c) = 1.0;  // guarantee both classes
    labels(1, c) = 0.0;
    for (std::size_t r = 2; r < 20; ++r) labels(r, c) = double(muser::bounded_uint(rng, 2));
  }
  muser::MacroMetric m = muser::roc_auc_macro(scores, labels);
  double mean = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::vector<double> s(20), y(20);
    for (std::size_t r = 0; r < 20; ++r) {
      s[r] = scores(r, c);
      y[r] = labels(r, c);
    }
    const double col = muser::auc_column(s, y);
    REQUIRE(m.per_column[c] == col);
    mean += col;
  }
  REQUIRE(m.macro == Approx(mean / 4.0).margin(1e-15));
}

// ---------------------------------------------------------------------------
// Zero-shot classification
// ---------------------------------------------------------------------------

TEST_CASE("zero-shot argmax scores prompts by dot product") {
  Matrix emb(1, 3, {1.0, 0.0, 0.0});
  Matrix prompts(3, 3, {0.5, 0.5, 0.0,
                        0.9, 0.1, 0.0,
                        -1.0, 0.0, 0.0});
  muser::ZeroShotResult r = muser::zero_shot_classify(emb, prompts);
  REQUIRE(r.scores == std::vector<double>{0.5, 0.9, -1.0});
  REQUIRE(r.cls == 1);
}

TEST_CASE("zero-shot ties break toward the lowest class index") {
  Matrix emb(1, 2, {1.0, 0.0});
  Matrix prompts(3, 2, {0.7, 0.0, 0.7, 0.5, 0.2, 0.0});
  REQUIRE(muser::zero_shot_classify(emb, prompts).cls == 0);
}

TEST_CASE("zero-shot validates its shapes") {
  REQUIRE_THROWS_AS(muser::zero_shot_classify(Matrix(1, 3), Matrix(0, 3)), muser::Error);
  REQUIRE_THROWS_AS(muser::zero_shot_classify(Matrix(2, 3), Matrix(2, 3)), muser::Error);
  REQUIRE_THROWS_AS(muser::zero_shot_classify(Matrix(1, 3), Matrix(2, 4)), muser::Error);
}

// ---------------------------------------------------------------------------
// Prompt fields and styles
// ---------------------------------------------------------------------------

TEST_CASE("class prompt fields take the modal value with lexicographic ties") {
  std::vector<DatasetRecord> records;
  records.push_back(make_record("r0", "rock", {"tagx"}));
  records.push_back(make_record("r1", "rock", {"tagx"}));
  records.push_back(make_record("r2", "rock", {"tagy"}));
  records.push_back(make_record("r3", "jazz", {"tagz"}));
  records.push_back(make_record("r4", "jazz", {"taga"}));  // tie tagz/taga -> taga

  auto fields = muser::derive_class_prompt_fields(records, {"jazz", "rock"});
  REQUIRE(fields.size() == 2);
  REQUIRE(fields[0].at("genre") == "jazz");
  REQUIRE(fields[0].at("tag") == "taga");
  REQUIRE(fields[1].at("genre") == "rock");
  REQUIRE(fields[1].at("tag") == "tagx");
  REQUIRE_THROWS_AS(muser::derive_class_prompt_fields(records, {"pop"}), muser::DataError);
}

TEST_CASE("tag prompt fields put the tag word into its own slot") {
  std::vector<DatasetRecord> records;
  records.push_back(make_record("r0", "rock", {"tagx", "styleq"}));
  records.push_back(make_record("r1", "jazz", {"tagx", "stylep"}));
  records.push_back(make_record("r2", "jazz", {"tagy", "stylep"}));
  auto fields = muser::derive_tag_prompt_fields(records, {"tagx", "tagy"});
  REQUIRE(fields[0].at("tag") == "tagx");
  REQUIRE(fields[1].at("tag") == "tagy");
  REQUIRE(fields[0].at("genre") == "jazz");  // modal tie jazz/rock -> jazz
  REQUIRE_THROWS_AS(muser::derive_tag_prompt_fields(records, {"nope"}), muser::DataError);
}

TEST_CASE("bare prompts order genre, tag, style, then extras") {
  std::map<std::string, std::string> fields{
      {"style", "fast"}, {"aaa_extra", "bonus"}, {"genre", "rock"}, {"tag", "loud"}};
  REQUIRE(muser::render_no_template(fields) == "rock loud fast bonus");
  REQUIRE(muser::render_no_template({{"tag", "loud"}}) == "loud");
  REQUIRE(muser::render_no_template({}) == "");
}

TEST_CASE("prompt styles render through their template or bare") {
  PromptStyle bare = PromptStyle::bare();
  REQUIRE(bare.name == "no-template");
  REQUIRE(bare.no_template);
  PromptStyle t = PromptStyle::from_template("t", "music of {genre}");
  REQUIRE(muser::render_prompt(t, {{"genre", "rock"}}) == "music of rock");
  REQUIRE(muser::render_prompt(bare, {{"genre", "rock"}, {"tag", "x"}}) == "rock x");
  REQUIRE_THROWS_AS(PromptStyle::from_template("bad", "broken {"), muser::Error);
}

TEST_CASE("the ablation set holds four fixed styles in order") {
  auto styles = muser::default_ablation_set();
  REQUIRE(styles.size() == 4);
  REQUIRE(styles[0].name == "no-template");
  REQUIRE(styles[0].no_template);
  REQUIRE(styles[1].name == "tags-for");
  REQUIRE(styles[2].name == "characterized-by");
  REQUIRE(styles[3].name == "song-of");
  const std::map<std::string, std::string> f{
      {"genre", "rock"}, {"tag", "loud"}, {"style", "fast"}};
  REQUIRE(muser::render_prompt(styles[1], f) == "tags for the rock music is loud");
  REQUIRE(muser::render_prompt(styles[2], f) == "the rock music is characterized by loud");
  REQUIRE(muser::render_prompt(styles[3], f) ==
          "a song of rock, belongs to loud, whose style is fast");
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

TEST_CASE("reports serialize to deterministic key=value lines") {
  muser::MetricsReport genre;
  genre.task = "genre";
  genre.n_examples = 12;
  genre.accuracy_value = 0.75;
  genre.accuracy_balanced = 0.5;
  genre.per_class_accuracy = {{"jazz", 1.0}, {"rock", 0.0}};
  auto lines = testutil::split_lines(genre.serialize());
  REQUIRE(lines[0] == "task=genre");
  REQUIRE(lines[1] == "n_examples=12");
  REQUIRE(lines[2] == "accuracy=" + muser::format_double(0.75));
  REQUIRE(lines[4] == "class.jazz.accuracy=" + muser::format_double(1.0));

  muser::MetricsReport tagging;
  tagging.task = "tagging";
  tagging.n_examples = 3;
  tagging.roc_auc = 0.5;
  tagging.ap = 0.25;
  tagging.per_class_auc = {{"loud", 0.5}};
  tagging.per_class_ap = {{"loud", 0.25}};
  tagging.excluded_classes = {"rare", "unused"};
  auto tl = testutil::split_lines(tagging.serialize());
  REQUIRE(tl[2] == "roc_auc_macro=" + muser::format_double(0.5));
  REQUIRE(tl[3] == "ap_macro=" + muser::format_double(0.25));
  REQUIRE(tl.back() == "excluded=rare,unused");
}

// ---------------------------------------------------------------------------
// Dataset-level zero-shot evaluation
// ---------------------------------------------------------------------------

TEST_CASE("genre evaluation reports per-class and balanced accuracy") {
  auto records = testutil::tiny_dataset(2, 4, 21);
  muser::ModelState state = untrained_state(records);
  const PromptStyle style = muser::default_ablation_set()[3];
  muser::MetricsReport r = muser::eval_zero_shot_genre(records, state, style);
  REQUIRE(r.task == "genre");
  REQUIRE(r.n_examples == records.size());
  REQUIRE(r.accuracy_value >= 0.0);
  REQUIRE(r.accuracy_value <= 1.0);
  REQUIRE(r.per_class_accuracy.size() == 2);
  REQUIRE(r.per_class_accuracy[0].first == "genre_0");
  const double balanced =
      (r.per_class_accuracy[0].second + r.per_class_accuracy[1].second) / 2.0;
  REQUIRE(r.accuracy_balanced == Approx(balanced).margin(1e-15));
  // byte-identical on repeat
  REQUIRE(muser::eval_zero_shot_genre(records, state, style).serialize() == r.serialize());
  std::vector<DatasetRecord> empty;
  REQUIRE_THROWS_AS(muser::eval_zero_shot_genre(empty, state, style), muser::DataError);
}

TEST_CASE("tagging evaluation scores every label word present") {
  auto records = testutil::tiny_dataset(2, 6, 22);
  muser::ModelState state = untrained_state(records);
  const PromptStyle style = muser::default_ablation_set()[1];
  muser::MetricsReport r = muser::eval_zero_shot_tagging(records, state, style);
  REQUIRE(r.task == "tagging");
  REQUIRE(r.n_examples == records.size());
  const auto tags = muser::tag_vocabulary(records);
  REQUIRE(r.per_class_auc.size() + r.excluded_classes.size() == tags.size());
  REQUIRE(r.roc_auc >= 0.0);
  REQUIRE(r.roc_auc <= 1.0);
  REQUIRE(r.ap > 0.0);
  REQUIRE(r.ap <= 1.0);
  REQUIRE(muser::eval_zero_shot_tagging(records, state, style).serialize() == r.serialize());
}

TEST_CASE("the task dispatcher rejects unknown tasks") {
  auto records = testutil::tiny_dataset(2, 4, 23);
  muser::ModelState state = untrained_state(records);
  REQUIRE_THROWS_AS(
      muser::eval_zero_shot(records, state, PromptStyle::bare(), "mood"),
      muser::UsageError);
}

TEST_CASE("the template ablation walks styles in order, deterministically") {
  auto records = testutil::tiny_dataset(2, 4, 24);
  muser::ModelState state = untrained_state(records);
  auto styles = muser::default_ablation_set();
  auto run1 = muser::template_ablation(records, state, styles, "genre");
  auto run2 = muser::template_ablation(records, state, styles, "genre");
  REQUIRE(run1.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(run1[i].first.name == styles[i].name);
    REQUIRE(run1[i].second.serialize() == run2[i].second.serialize());
  }
  REQUIRE_THROWS_AS(muser::template_ablation(records, state, {}, "genre"),
                    muser::UsageError);
}

// ---------------------------------------------------------------------------
// Stratified selection and the few-shot sweep
// ---------------------------------------------------------------------------

TEST_CASE("stratified order is a balanced permutation") {
  auto records = testutil::tiny_dataset(3, 5, 31);  // 15 records, 3 classes
  auto order = muser::stratified_order(records, 7);
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(records.size());
  std::iota(iota.begin(), iota.end(), 0);
  REQUIRE(sorted == iota);  // a permutation

  // round-robin: every prefix of length 3k holds exactly k per class
  const auto classes = muser::genre_classes(records);
  for (std::size_t k = 1; k <= 5; ++k) {
    std::vector<std::size_t> counts(classes.size(), 0);
    for (std::size_t i = 0; i < 3 * k; ++i) {
      const std::string& g = records[order[i]].metadata.at("genre");
      ++counts[muser::genre_index(classes, g)];
    }
    for (std::size_t c : counts) REQUIRE(c == k);
  }

  REQUIRE(muser::stratified_order(records, 7) == order);   // deterministic
  REQUIRE(muser::stratified_order(records, 8) != order);   // seed-sensitive
}

TEST_CASE("stratified order handles uneven classes") {
  std::vector<DatasetRecord> records;
  for (int i = 0; i < 5; ++i)
    records.push_back(make_record("a" + std::to_string(i), "rock", {"t"}));
  records.push_back(make_record("b0", "jazz", {"t"}));
  auto order = muser::stratified_order(records, 1);
  REQUIRE(order.size() == 6);
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  // the lone jazz record appears in the first round of two
  const std::size_t jazz_pos =
      std::size_t(std::find(order.begin(), order.end(), 5) - order.begin());
  REQUIRE(jazz_pos < 2);
}

TEST_CASE("ratio subsets take floor-sized nested prefixes") {
  std::vector<std::size_t> order{9, 3, 7, 1, 8, 0, 5, 2, 6, 4};
  REQUIRE(muser::subset_at_ratio(order, 0.1).size() == 1);
  REQUIRE(muser::subset_at_ratio(order, 0.25).size() == 2);
  REQUIRE(muser::subset_at_ratio(order, 0.05).empty());
  REQUIRE(muser::subset_at_ratio(order, 1.0) == order);
  auto small = muser::subset_at_ratio(order, 0.3);
  auto big = muser::subset_at_ratio(order, 0.7);
  REQUIRE(std::equal(small.begin(), small.end(), big.begin()));  // nested
  REQUIRE_THROWS_AS(muser::subset_at_ratio(order, 0.0), muser::UsageError);
  REQUIRE_THROWS_AS(muser::subset_at_ratio(order, 1.5), muser::UsageError);
  REQUIRE_THROWS_AS(muser::subset_at_ratio(order, -0.5), muser::UsageError);
}

TEST_CASE("few-shot sweep skips tiny subsets and nests larger ones") {
  auto train_records = testutil::tiny_dataset(2, 8, 41);  // 16 records
  auto test_records = testutil::tiny_dataset(2, 4, 42);
  muser::TrainConfig base_cfg = testutil::tiny_train();
  auto base = muser::train(base_cfg, train_records);

  muser::TrainConfig ft = base.state.config;
  ft.epochs = 2;
  ft.seed = 5;
  const PromptStyle style = muser::default_ablation_set()[3];
  auto points = muser::few_shot_sweep(base.state, ft, train_records, test_records,
                                      {0.2, 0.5, 1.0}, style);
  REQUIRE(points.size() == 3);
  REQUIRE(points[0].ratio == 0.2);
  REQUIRE(points[0].n_train == 3);  // floor(0.2 * 16) < batch 4
  REQUIRE(points[0].skipped);
  REQUIRE(points[0].log.empty());
  REQUIRE(points[1].n_train == 8);
  REQUIRE_FALSE(points[1].skipped);
  REQUIRE(points[1].report.task == "genre");
  REQUIRE(points[1].report.n_examples == test_records.size());
  REQUIRE(points[2].n_train == 16);
  REQUIRE_FALSE(points[2].skipped);
  REQUIRE_FALSE(points[1].log.empty());
}

TEST_CASE("the full-ratio point is byte-identical to a plain fine-tune") {
  auto train_records = testutil::tiny_dataset(2, 8, 43);
  auto test_records = testutil::tiny_dataset(2, 4, 44);
  muser::TrainConfig base_cfg = testutil::tiny_train();
  auto base = muser::train(base_cfg, train_records);

  muser::TrainConfig ft = base.state.config;
  ft.epochs = 2;
  ft.seed = 9;
  const PromptStyle style = muser::default_ablation_set()[3];
  auto points = muser::few_shot_sweep(base.state, ft, train_records, test_records,
                                      {1.0}, style);
  REQUIRE(points.size() == 1);

  std::vector<muser::DatasetRecord> plain_records = train_records;
  auto plain = muser::train(ft, plain_records, &base.state);
  REQUIRE(points[0].log == plain.log);
  REQUIRE(points[0].report.serialize() ==
          muser::eval_zero_shot_genre(test_records, plain.state, style).serialize());
}

TEST_CASE("few-shot sweep validates its ratio schedule") {
  auto train_records = testutil::tiny_dataset(2, 4, 45);
  auto test_records = testutil::tiny_dataset(2, 2, 46);
  muser::TrainConfig base_cfg = testutil::tiny_train();
  auto base = muser::train(base_cfg, train_records);
  muser::TrainConfig ft = base.state.config;
  const PromptStyle style = PromptStyle::bare();
  auto sweep = [&](std::vector<double> ratios) {
    return muser::few_shot_sweep(base.state, ft, train_records, test_records, ratios,
                                 style);
  };
  REQUIRE_THROWS_AS(sweep({}), muser::UsageError);
  REQUIRE_THROWS_AS(sweep({0.0, 0.5}), muser::UsageError);
  REQUIRE_THROWS_AS(sweep({0.5, 0.2}), muser::UsageError);
  REQUIRE_THROWS_AS(sweep({0.5, 0.5}), muser::UsageError);
  REQUIRE_THROWS_AS(sweep({0.5, 1.5}), muser::UsageError);
}
