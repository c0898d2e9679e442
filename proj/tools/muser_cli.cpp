// Command-line front end: synth, train, eval, zeroshot, fewshot, stft,
// ablate-templates. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "muser/muser.hpp"

namespace {

using namespace muser;

std::uint64_t env_seed_or(std::uint64_t fallback) {
  const char* env = std::getenv("MUSER_SEED");
  if (env == nullptr || *env == '\0') return fallback;
  return parse_uint(env, "MUSER_SEED");
}

TrainConfig build_config(const std::string& config_path, const std::vector<std::string>& sets) {
  TrainConfig config;
  config.seed = env_seed_or(config.seed);
  if (!config_path.empty())
    config = parse_config_text(read_file_text(config_path), config_path, config);
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_config_entry(config, muser::detail::trim(kv.substr(0, eq)),
                       muser::detail::trim(kv.substr(eq + 1)));
  }
  return config;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const std::string& line : lines) {
    text += line;
    text += '\n';
  }
  if (path.empty()) {
    std::cout << text;
  } else {
    write_file_text(path, text);
  }
}

PromptStyle resolve_prompt_style(bool no_template, const std::string& template_text,
                                 const TrainConfig& ckpt_config) {
  if (no_template) return PromptStyle::bare();
  if (!template_text.empty()) return PromptStyle::from_template("custom", template_text);
  return PromptStyle::from_template("config", ckpt_config.caption_template);
}

std::vector<DatasetRecord> load_records_with_audio(const std::string& meta_path) {
  std::vector<DatasetRecord> records = load_metadata(meta_path);
  if (records.empty()) throw DataError(meta_path + ": dataset is empty");
  load_dataset_audio(records);
  return records;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  std::size_t classes = 4;
  std::size_t per_class = 32;
  double seconds = 1.0;
  std::size_t rate = 8000;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_synth(const SynthArgs& a) {
  const std::uint64_t seed = a.seed_given ? a.seed : env_seed_or(0);
  std::vector<DatasetRecord> records =
      synth_dataset(a.classes, a.per_class, a.seconds, a.rate, seed);
  const std::string meta = write_dataset(a.out_dir, records);
  std::cout << "wrote " << records.size() << " clips to " << a.out_dir << "\n"
            << "metadata=" << meta << "\n";
  return 0;
}

struct TrainArgs {
  std::string data_path;
  std::string out_path;
  std::string log_path;
  std::string config_path;
  std::vector<std::string> sets;
  std::string resume_path;
  std::string init_from_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  bool no_spectrum = false;
};

int cmd_train(const TrainArgs& a) {
  std::vector<DatasetRecord> records = load_metadata(a.data_path);
  load_dataset_audio(records);

  const auto on_epoch = [&](const ModelState& st) {
    const std::size_t k = st.config.checkpoint_every;
    if (k > 0 && st.epochs_done % k == 0 && st.epochs_done < st.config.epochs)
      save_checkpoint(a.out_path + ".epoch" + std::to_string(st.epochs_done), st);
  };

  TrainOutput out;
  if (!a.resume_path.empty()) {
    if (!a.config_path.empty() || !a.sets.empty() || !a.init_from_path.empty() ||
        a.seed.has_value() || a.lr.has_value() || a.batch_size.has_value() || a.no_spectrum)
      throw UsageError("--resume continues an existing run; only --epochs may be overridden");
    ModelState state = load_checkpoint(a.resume_path);
    if (a.epochs.has_value()) state.config.epochs = *a.epochs;
    out = resume(std::move(state), records, on_epoch);
  } else {
    TrainConfig config = build_config(a.config_path, a.sets);
    if (a.seed.has_value()) config.seed = *a.seed;
    if (a.epochs.has_value()) config.epochs = *a.epochs;
    if (a.lr.has_value()) config.lr = *a.lr;
    if (a.batch_size.has_value()) config.batch_size = *a.batch_size;
    if (a.no_spectrum) config.spectrum_enabled = false;
    if (!a.init_from_path.empty()) {
      ModelState base = load_checkpoint(a.init_from_path);
      out = train(config, records, &base, on_epoch);
    } else {
      out = train(config, records, nullptr, on_epoch);
    }
  }
  save_checkpoint(a.out_path, out.state);
  write_lines(a.log_path, out.log);
  std::cerr << "checkpoint=" << a.out_path << " epochs=" << out.state.epochs_done << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt_path;
  std::string data_path;
  std::string task = "tagging";
  std::string template_text;
  bool no_template = false;
};

int cmd_eval(const EvalArgs& a) {
  const ModelState state = load_checkpoint(a.ckpt_path);
  const std::vector<DatasetRecord> records = load_records_with_audio(a.data_path);
  const PromptStyle style =
      resolve_prompt_style(a.no_template, a.template_text, state.config);
  const MetricsReport report = eval_zero_shot(records, state, style, a.task);
  std::cout << report.serialize();
  return 0;
}

struct FewshotArgs {
  std::string ckpt_path;
  std::string train_path;
  std::string test_path;
  std::string ratios_text = "0.1,0.2,0.4,1.0";
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::string template_text;
  bool no_template = false;
};

int cmd_fewshot(const FewshotArgs& a) {
  const ModelState base = load_checkpoint(a.ckpt_path);
  std::vector<DatasetRecord> train_records = load_metadata(a.train_path);
  std::vector<DatasetRecord> test_records = load_metadata(a.test_path);
  if (train_records.empty()) throw DataError(a.train_path + ": dataset is empty");
  if (test_records.empty()) throw DataError(a.test_path + ": dataset is empty");

  TrainConfig ft_config = base.config;
  if (!a.config_path.empty())
    ft_config = parse_config_text(read_file_text(a.config_path), a.config_path, ft_config);
  for (const std::string& kv : a.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_config_entry(ft_config, muser::detail::trim(kv.substr(0, eq)),
                       muser::detail::trim(kv.substr(eq + 1)));
  }
  if (a.seed.has_value()) ft_config.seed = *a.seed;
  if (a.epochs.has_value()) ft_config.epochs = *a.epochs;
  if (a.lr.has_value()) ft_config.lr = *a.lr;
  if (a.batch_size.has_value()) ft_config.batch_size = *a.batch_size;

  std::vector<double> ratios;
  std::size_t start = 0;
  while (start <= a.ratios_text.size()) {
    std::size_t end = a.ratios_text.find(',', start);
    if (end == std::string::npos) end = a.ratios_text.size();
    const std::string piece = muser::detail::trim(a.ratios_text.substr(start, end - start));
    if (!piece.empty()) ratios.push_back(parse_double(piece, "--ratios"));
    start = end + 1;
  }

  const PromptStyle style = resolve_prompt_style(a.no_template, a.template_text, base.config);
  const std::vector<FewShotPoint> points =
      few_shot_sweep(base, ft_config, train_records, test_records, ratios, style);
  for (const FewShotPoint& p : points) {
    std::cout << "[ratio=" << format_double(p.ratio) << "]\n";
    std::cout << "n_train=" << p.n_train << "\n";
    std::cout << "status=" << (p.skipped ? "skipped" : "ok") << "\n";
    if (!p.skipped) std::cout << p.report.serialize();
    std::cout << "\n";
  }
  return 0;
}

struct StftArgs {
  std::string in_path;
  std::string out_path;
  std::size_t frame_len = 512;
  std::size_t hop = 256;
  std::string window = "hann";
  bool linear = false;
  double eps = 1e-6;
};

int cmd_stft(const StftArgs& a) {
  StftParams params;
  params.frame_len = a.frame_len;
  params.hop = a.hop;
  params.window = window_from_name(a.window);
  params.log_compress = !a.linear;
  params.eps = a.eps;
  const AudioClip clip = read_wav(a.in_path);
  const Spectrum spec = stft(clip, params);
  write_matrix(a.out_path, spec.mags);
  std::cout << "bins=" << spec.bins() << " frames=" << spec.frames() << " out=" << a.out_path
            << "\n";
  return 0;
}

struct AblateArgs {
  std::string ckpt_path;
  std::string data_path;
  std::string task = "tagging";
  std::vector<std::string> templates;
  bool with_no_template = false;
};

int cmd_ablate(const AblateArgs& a) {
  const ModelState state = load_checkpoint(a.ckpt_path);
  const std::vector<DatasetRecord> records = load_records_with_audio(a.data_path);

  std::vector<PromptStyle> styles;
  if (a.templates.empty() && !a.with_no_template) {
    styles = default_ablation_set();
  } else {
    if (a.with_no_template) styles.push_back(PromptStyle::bare());
    for (std::size_t i = 0; i < a.templates.size(); ++i)
      styles.push_back(
          PromptStyle::from_template("template" + std::to_string(i), a.templates[i]));
  }

  const auto results = template_ablation(records, state, styles, a.task);
  if (a.task == "tagging") {
    std::cout << "template\troc_auc_macro\tap_macro\n";
    for (const auto& [style, report] : results)
      std::cout << style.name << "\t" << format_double(report.roc_auc) << "\t"
                << format_double(report.ap) << "\n";
  } else {
    std::cout << "template\taccuracy\n";
    for (const auto& [style, report] : results)
      std::cout << style.name << "\t" << format_double(report.accuracy_value) << "\n";
  }
  for (const auto& [style, report] : results) {
    std::cout << "\n[template=" << style.name << "]\n";
    std::cout << "text=" << (style.no_template ? "(none)" : style.spec.text) << "\n";
    std::cout << report.serialize();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MUSER: tri-modal contrastive audio/spectrum/text toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic labeled corpus");
  synth->add_option("--out", synth_args.out_dir, "Output directory")->required();
  synth->add_option("--classes", synth_args.classes, "Number of classes");
  synth->add_option("--per-class", synth_args.per_class, "Clips per class");
  synth->add_option("--seconds", synth_args.seconds, "Clip length in seconds");
  synth->add_option("--rate", synth_args.rate, "Sample rate in Hz");
  CLI::Option* synth_seed = synth->add_option("--seed", synth_args.seed, "RNG seed");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train (or fine-tune / resume) a model");
  train->add_option("--data", train_args.data_path, "Metadata file")->required();
  train->add_option("--out", train_args.out_path, "Checkpoint output path")->required();
  train->add_option("--log", train_args.log_path, "Training log path (default stdout)");
  train->add_option("--config", train_args.config_path, "Config file");
  train->add_option("--set", train_args.sets, "Config override key=value (repeatable)");
  train->add_option("--resume", train_args.resume_path, "Continue an interrupted run");
  train->add_option("--init-from", train_args.init_from_path, "Warm-start from checkpoint");
  train->add_option("--seed", train_args.seed, "RNG seed");
  train->add_option("--epochs", train_args.epochs, "Epoch count");
  train->add_option("--lr", train_args.lr, "Learning rate");
  train->add_option("--batch-size", train_args.batch_size, "Batch size");
  train->add_flag("--no-spectrum", train_args.no_spectrum, "Disable the spectrum branch");

  EvalArgs eval_args;
  CLI::App* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled dataset");
  evalc->add_option("--ckpt", eval_args.ckpt_path, "Checkpoint")->required();
  evalc->add_option("--data", eval_args.data_path, "Metadata file")->required();
  evalc->add_option("--task", eval_args.task, "genre | tagging");
  evalc->add_option("--template", eval_args.template_text, "Prompt template");
  evalc->add_flag("--no-template", eval_args.no_template, "Bare field concatenation prompts");

  EvalArgs zs_args;
  zs_args.task = "genre";
  CLI::App* zeroshot = app.add_subcommand("zeroshot", "Zero-shot genre classification");
  zeroshot->add_option("--ckpt", zs_args.ckpt_path, "Checkpoint")->required();
  zeroshot->add_option("--data", zs_args.data_path, "Metadata file")->required();
  zeroshot->add_option("--template", zs_args.template_text, "Prompt template");
  zeroshot->add_flag("--no-template", zs_args.no_template, "Bare field concatenation prompts");

  FewshotArgs fs_args;
  CLI::App* fewshot = app.add_subcommand("fewshot", "Few-shot fine-tuning sweep");
  fewshot->add_option("--ckpt", fs_args.ckpt_path, "Base checkpoint")->required();
  fewshot->add_option("--train", fs_args.train_path, "Fine-tune metadata file")->required();
  fewshot->add_option("--test", fs_args.test_path, "Test metadata file")->required();
  fewshot->add_option("--ratios", fs_args.ratios_text, "Comma list of ratios in (0,1]");
  fewshot->add_option("--config", fs_args.config_path, "Fine-tune config file");
  fewshot->add_option("--set", fs_args.sets, "Config override key=value (repeatable)");
  fewshot->add_option("--seed", fs_args.seed, "RNG seed");
  fewshot->add_option("--epochs", fs_args.epochs, "Fine-tune epochs");
  fewshot->add_option("--lr", fs_args.lr, "Fine-tune learning rate");
  fewshot->add_option("--batch-size", fs_args.batch_size, "Batch size");
  fewshot->add_option("--template", fs_args.template_text, "Prompt template");
  fewshot->add_flag("--no-template", fs_args.no_template, "Bare field concatenation prompts");

  StftArgs stft_args;
  CLI::App* stftc = app.add_subcommand("stft", "Short-time Fourier transform of a WAV file");
  stftc->add_option("--in", stft_args.in_path, "Input WAV")->required();
  stftc->add_option("--out", stft_args.out_path, "Output MUSERMAT")->required();
  stftc->add_option("--frame-len", stft_args.frame_len, "Frame length (power of two)");
  stftc->add_option("--hop", stft_args.hop, "Hop size");
  stftc->add_option("--window", stft_args.window, "hann | rect");
  stftc->add_flag("--linear", stft_args.linear, "Skip log compression");
  stftc->add_option("--eps", stft_args.eps, "Log compression epsilon");

  AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand("ablate-templates", "Compare prompt templates");
  ablate->add_option("--ckpt", ablate_args.ckpt_path, "Checkpoint")->required();
  ablate->add_option("--data", ablate_args.data_path, "Metadata file")->required();
  ablate->add_option("--task", ablate_args.task, "genre | tagging");
  ablate->add_option("--template", ablate_args.templates, "Template (repeatable)");
  ablate->add_flag("--with-no-template", ablate_args.with_no_template,
                   "Prepend the bare concatenation entry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      synth_args.seed_given = synth_seed->count() > 0;
      return cmd_synth(synth_args);
    }
    if (*train) return cmd_train(train_args);
    if (*evalc) return cmd_eval(eval_args);
    if (*zeroshot) return cmd_eval(zs_args);
    if (*fewshot) return cmd_fewshot(fs_args);
    if (*stftc) return cmd_stft(stft_args);
    if (*ablate) return cmd_ablate(ablate_args);
    throw UsageError("no subcommand selected");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
