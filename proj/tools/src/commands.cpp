#include "vitforge_cli/commands.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "vitforge/artifacts.hpp"
#include "vitforge/checkpoint.hpp"
#include "vitforge/config.hpp"
#include "vitforge/dataset.hpp"
#include "vitforge/image.hpp"
#include "vitforge/metrics.hpp"
#include "vitforge/parallel.hpp"
#include "vitforge/run_io.hpp"
#include "vitforge/train.hpp"
#include "vitforge_cli/lock.hpp"

namespace fs = std::filesystem;

namespace vitforge::cli {

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string data;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Run configuration file (key = value)");
  cmd->add_option("--seed", o.seed, "Seed for splitting, initialisation, shuffling, and augmentation");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "VITF checkpoint path");
  cmd->add_option("--data", o.data, "Dataset root (root/<class>/<images>); synthetic data when omitted");
  cmd->add_option("--set", o.overrides, "Override one configuration key, e.g. --set train.max_epochs=5");
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& assignment : o.overrides) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError(assignment, 0, "--set expects key=value");
    set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
  }
  if (o.seed) cfg.apply_seed(*o.seed);
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (!o.data.empty()) cfg.data.root = o.data;
  cfg.validate();
  return cfg;
}

struct Splits {
  ClassMap classes;
  Dataset train;
  Dataset validation;
  Dataset test;
};

Dataset load_source(const RunConfig& cfg) {
  const auto& v = cfg.vit;
  Dataset all = cfg.data.root.empty()
                    ? gen_synthetic(cfg.data.synthetic_per_class, v.num_classes, v.image_height, v.image_width,
                                    v.channels, cfg.synthetic_seed())
                    : load_dataset(cfg.data.root, discover_classes(cfg.data.root), v.image_height, v.image_width,
                                   v.channels);
  if (all.classes.size() != v.num_classes) {
    throw DataError(fmt::format("dataset has {} classes but vit.num_classes is {}", all.classes.size(), v.num_classes));
  }
  return all;
}

std::vector<std::size_t> indices_from_file(const fs::path& file, const std::map<std::string, std::size_t>& by_path) {
  std::vector<std::size_t> out;
  for (const auto& rel : read_index_file(file)) {
    const auto it = by_path.find(rel);
    if (it == by_path.end()) throw DataError(fmt::format("{} lists '{}', which is not in the dataset", file.string(), rel));
    out.push_back(it->second);
  }
  return out;
}

Splits prepare_splits(const RunConfig& cfg) {
  Dataset all = load_source(cfg);
  SplitIndices idx;
  if (cfg.data.split_dir.empty()) {
    idx = split(all, cfg.split);
  } else {
    std::map<std::string, std::size_t> by_path;
    for (std::size_t i = 0; i < all.size(); ++i) by_path[all.samples[i].source_path] = i;
    const fs::path dir = cfg.data.split_dir;
    idx.train = indices_from_file(dir / "train.idx", by_path);
    idx.validation = indices_from_file(dir / "val.idx", by_path);
    idx.test = indices_from_file(dir / "test.idx", by_path);
  }
  return Splits{all.classes, all.subset(idx.train), all.subset(idx.validation), all.subset(idx.test)};
}

std::vector<std::string> paths_of(const Dataset& d) {
  std::vector<std::string> out;
  for (const auto& s : d.samples) out.push_back(s.source_path);
  return out;
}

void write_split_files(const fs::path& dir, const Splits& s) {
  write_index_file(dir / "train.idx", paths_of(s.train));
  write_index_file(dir / "val.idx", paths_of(s.validation));
  write_index_file(dir / "test.idx", paths_of(s.test));
  write_text_file(dir / "classes.txt", s.classes.to_text());
}

ClassMap classes_for(const RunConfig& cfg) {
  if (cfg.data.root.empty()) return synthetic_classes(cfg.vit.num_classes);
  if (fs::is_directory(cfg.data.root)) {
    auto classes = discover_classes(cfg.data.root);
    if (classes.size() == cfg.vit.num_classes) return classes;
  }
  std::vector<std::string> names;
  for (std::size_t k = 0; k < cfg.vit.num_classes; ++k) names.push_back(fmt::format("class_{}", k));
  return ClassMap(std::move(names));
}

void write_evaluation(const fs::path& dir, const EvalResult& result, const std::string& label) {
  const Report report = make_report(result.confusion, label);
  write_text_file(dir / "confusion.csv", confusion_csv(result.confusion));
  write_text_file(dir / "confusion.svg", confusion_svg(result.confusion, fmt::format("{} confusion matrix", label)));
  write_text_file(dir / "report.txt", render_report(report) + fmt::format("\nLoss {:.6f}\n", result.loss));
  write_text_file(dir / "report.json", serialize_report(report));
}

// Keys that may change between a run and its resumption.
bool resumable_key(const std::string& key) {
  return key == "train.max_epochs" || key == "train.target_val_accuracy" || key == "out" || key == "checkpoint";
}

void check_resume_compatible(const RunConfig& saved, const RunConfig& now) {
  std::istringstream a(to_text(saved));
  std::istringstream b(to_text(now));
  std::string la;
  std::string lb;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la == lb) continue;
    const std::string key = la.substr(0, la.find(" = "));
    if (!resumable_key(key)) {
      throw ConfigError(key, 0, fmt::format("differs from the checkpoint being resumed ('{}' vs '{}')", lb, la));
    }
  }
}

int cmd_split(const CommonOptions& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const Splits s = prepare_splits(cfg);
  DirectoryLock lock(cfg.out);
  write_split_files(cfg.out, s);
  out << fmt::format("train {} / validation {} / test {} -> {}\n", s.train.size(), s.validation.size(),
                     s.test.size(), cfg.out);
  return 0;
}

int cmd_gen_synthetic(const CommonOptions& o, std::optional<std::size_t> per_class, std::ostream& out) {
  RunConfig cfg = resolve_config(o);
  if (per_class) cfg.data.synthetic_per_class = *per_class;
  if (cfg.data.synthetic_per_class == 0) throw ConfigError("--per-class", 0, "must be at least 1");
  const auto& v = cfg.vit;
  const Dataset d = gen_synthetic(cfg.data.synthetic_per_class, v.num_classes, v.image_height, v.image_width,
                                  v.channels, cfg.synthetic_seed());
  const fs::path root = cfg.out;
  DirectoryLock lock(root);
  for (const auto& name : d.classes.names()) fs::create_directories(root / name);
  for (const auto& s : d.samples) write_pnm(root / s.source_path, s.pixels);
  write_text_file(root / "classes.txt", d.classes.to_text());
  out << fmt::format("wrote {} images in {} classes to {}\n", d.size(), d.classes.size(), root.string());
  return 0;
}

int cmd_train(const CommonOptions& o, bool resume, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = cfg.out;
  DirectoryLock lock(dir);
  write_text_file(dir / "config.cfg", to_text(cfg));

  Splits s = prepare_splits(cfg);
  write_split_files(dir, s);
  if (cfg.data.shuffle_train_labels) {
    auto labels = s.train.labels();
    Rng rng = Rng::derive(cfg.seed, {0x1abe1});
    rng.shuffle(std::span<int>(labels));
    for (std::size_t i = 0; i < labels.size(); ++i) s.train.samples[i].label = labels[i];
  }

  const fs::path last_path = dir / "last.vitf";
  const fs::path best_path = cfg.checkpoint.empty() ? dir / "best.vitf" : fs::path(cfg.checkpoint);
  std::unique_ptr<ViTClassifier> model;
  TrainState state;
  if (resume) {
    const fs::path from = o.checkpoint.empty() ? last_path : fs::path(o.checkpoint);
    const Checkpoint ckpt = load_checkpoint(from);
    LoadedRun run = load_run(ckpt);
    check_resume_compatible(run.config, cfg);
    state = load_train_state(ckpt, run);
    if (state.finished && state.stop_reason == StopReason::max_epochs && cfg.train.max_epochs > state.epochs_done) {
      state.finished = false;
    }
    model = std::move(run.model);
    out << fmt::format("resuming from {} after epoch {}\n", from.string(), state.epochs_done);
  } else {
    model = std::make_unique<ViTClassifier>(cfg.vit, cfg.seed);
  }
  out << fmt::format("train {} / validation {} / test {} samples; {} parameters\n", s.train.size(),
                     s.validation.size(), s.test.size(), count_parameters(cfg.vit).total());

  auto clock = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.last_checkpoint = [&] { return fs::exists(last_path) ? last_path.string() : std::string(); };
  hooks.on_epoch_end = [&](const TrainState& st) {
    const auto& r = st.history.back();
    write_text_file(dir / "curves.csv", curves_csv(st.history));
    write_text_file(dir / "curves.svg", curves_svg(st.history));
    save_checkpoint(last_path, resume_checkpoint(cfg, *model, st));
    if (st.best_epoch == st.epochs_done) save_checkpoint(best_path, model_checkpoint(cfg, *model, &st));
    const auto now = std::chrono::steady_clock::now();
    out << fmt::format(
        "epoch {:>3}/{}  train_loss {:.4f}  train_acc {:.4f}  val_loss {:.4f}  val_acc {:.4f}  ({:.1f} s)\n",
        r.epoch, cfg.train.max_epochs, r.train_loss, r.train_acc, r.val_loss, r.val_acc,
        std::chrono::duration<double>(now - clock).count());
    out.flush();
    clock = now;
  };
  const std::optional<AugmentSpec> aug = cfg.augment_enabled ? std::optional(cfg.augment) : std::nullopt;
  const TrainResult result = train(*model, s.train, s.validation, cfg.train, aug, hooks, &state);
  out << fmt::format("stopped: {} after {} epochs; best epoch {}\n", to_string(result.stop_reason),
                     result.history.size(), result.best_epoch);

  const Dataset& final_set = s.test.size() > 0 ? s.test : s.validation;
  const EvalResult eval = evaluate(*model, final_set, cfg.train.eval_batch_size);
  write_evaluation(dir, eval, "ViT");
  out << fmt::format("test accuracy {:.4f} on {} samples; reports in {}\n", accuracy(eval.confusion),
                     final_set.size(), dir.string());
  return 0;
}

LoadedRun open_checkpoint(const CommonOptions& o, const RunConfig* cfg) {
  std::string path = o.checkpoint;
  if (path.empty() && cfg != nullptr) path = cfg->checkpoint;
  if (path.empty()) throw ConfigError("--checkpoint", 0, "a checkpoint path is required");
  return load_run(load_checkpoint(path));
}

int cmd_eval(const CommonOptions& o, const std::string& index, std::ostream& out) {
  std::optional<RunConfig> file_cfg;
  if (!o.config.empty()) file_cfg = resolve_config(o);
  LoadedRun run = open_checkpoint(o, file_cfg ? &*file_cfg : nullptr);
  RunConfig cfg = run.config;
  if (!o.data.empty()) cfg.data.root = o.data;
  if (file_cfg) cfg.data = file_cfg->data;
  const fs::path dir = o.out.empty() ? fs::path(file_cfg ? file_cfg->out : cfg.out) : fs::path(o.out);

  Dataset data;
  if (!index.empty()) {
    if (cfg.data.root.empty()) throw ConfigError("--data", 0, "--index needs a dataset root");
    const auto classes = discover_classes(cfg.data.root);
    data = load_indexed(cfg.data.root, read_index_file(index), classes, cfg.vit.image_height, cfg.vit.image_width,
                        cfg.vit.channels);
  } else {
    data = prepare_splits(cfg).test;
  }
  if (data.classes.size() != run.model->num_classes()) {
    throw DataError(fmt::format("checkpoint predicts {} classes but the dataset has {}", run.model->num_classes(),
                                data.classes.size()));
  }
  DirectoryLock lock(dir);
  const EvalResult eval = evaluate(*run.model, data, cfg.train.eval_batch_size);
  write_evaluation(dir, eval, "ViT");
  out << fmt::format("accuracy {:.4f} on {} samples; loss {:.6f}; reports in {}\n", accuracy(eval.confusion),
                     data.size(), eval.loss, dir.string());
  return 0;
}

int cmd_predict(const CommonOptions& o, const std::vector<std::string>& images, std::ostream& out, std::ostream& err) {
  std::optional<RunConfig> file_cfg;
  if (!o.config.empty()) file_cfg = resolve_config(o);
  LoadedRun run = open_checkpoint(o, file_cfg ? &*file_cfg : nullptr);
  const auto& v = run.config.vit;
  const ClassMap classes = classes_for(run.config);
  for (const auto& path : images) {
    Image raw;
    try {
      raw = read_image(path);
    } catch (const ImageDecodeError& e) {
      throw DataError(fmt::format("cannot decode {}: {}", path, e.what()));
    }
    if (raw.height != v.image_height || raw.width != v.image_width) {
      err << fmt::format("warning: {} is {}x{}; resizing to {}x{}\n", path, raw.height, raw.width, v.image_height,
                         v.image_width);
    }
    Dataset one;
    one.classes = classes;
    one.samples.push_back({prepare_image(raw, v.image_height, v.image_width, v.channels), 0, path});
    const auto probs = predict_proba(*run.model, one, 1);
    const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    out << fmt::format("{}: {}\n", path, classes.name(static_cast<int>(best)));
    for (std::size_t k = 0; k < probs.size(); ++k) {
      out << fmt::format("  {} {:.9f}\n", classes.name(static_cast<int>(k)), probs[k]);
    }
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir, std::ostream& out) {
  std::vector<Report> reports;
  for (const auto& input : inputs) {
    fs::path file = input;
    if (fs::is_directory(file)) file /= "report.json";
    Report r;
    try {
      r = parse_report(read_text_file(file));
    } catch (const MetricsError& e) {
      throw DataError(fmt::format("{}: {}", file.string(), e.what()));
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
    if (fs::is_directory(input)) r.model_label = fs::path(input).filename().string();
    reports.push_back(std::move(r));
  }
  std::string table;
  try {
    table = compare(reports).render();
  } catch (const MetricsError& e) {
    throw DataError(e.what());
  }
  out << table;
  if (!out_dir.empty()) {
    DirectoryLock lock(out_dir);
    write_text_file(fs::path(out_dir) / "comparison.txt", table);
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Vision Transformer training and evaluation toolkit", "vitforge"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vitforge 0.1.0");

  CommonOptions split_o, train_o, eval_o, predict_o, gen_o;
  auto* split_cmd = app.add_subcommand("split", "Write train/val/test index files");
  add_common(split_cmd, split_o);

  auto* train_cmd = app.add_subcommand("train", "Train a ViT and write curves, checkpoints, and reports");
  add_common(train_cmd, train_o);
  bool resume = false;
  train_cmd->add_flag("--resume", resume, "Continue from <out>/last.vitf (or --checkpoint)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split or an index file");
  add_common(eval_cmd, eval_o);
  std::string index;
  eval_cmd->add_option("--index", index, "Index file of relative image paths under --data");

  auto* predict_cmd = app.add_subcommand("predict", "Print class probabilities for images");
  add_common(predict_cmd, predict_o);
  std::vector<std::string> images;
  predict_cmd->add_option("images", images, "Image files")->required();

  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic dataset tree");
  add_common(gen_cmd, gen_o);
  std::optional<std::size_t> per_class;
  gen_cmd->add_option("--per-class", per_class, "Images per class");

  auto* report_cmd = app.add_subcommand("report", "Compare report.json files (or run directories) side by side");
  std::vector<std::string> inputs;
  std::string report_out;
  report_cmd->add_option("inputs", inputs, "report.json files or run directories")->required();
  report_cmd->add_option("--out", report_out, "Also write comparison.txt here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(Exit::usage);
  }

  retain_freed_memory();
  try {
    if (*split_cmd) return cmd_split(split_o, out);
    if (*train_cmd) return cmd_train(train_o, resume, out);
    if (*eval_cmd) return cmd_eval(eval_o, index, out);
    if (*predict_cmd) return cmd_predict(predict_o, images, out, err);
    if (*gen_cmd) return cmd_gen_synthetic(gen_o, per_class, out);
    if (*report_cmd) return cmd_report(inputs, report_out, out);
  } catch (const ConfigError& e) {
    err << "vitforge: configuration error: " << e.what() << '\n';
    return static_cast<int>(Exit::config);
  } catch (const DataError& e) {
    err << "vitforge: data error: " << e.what() << '\n';
    return static_cast<int>(Exit::data);
  } catch (const DivergenceError& e) {
    err << "vitforge: training diverged: " << e.what() << '\n';
    return static_cast<int>(Exit::divergence);
  } catch (const NonFiniteGradientError& e) {
    err << "vitforge: training diverged: " << e.what() << '\n';
    return static_cast<int>(Exit::divergence);
  } catch (const CheckpointError& e) {
    err << "vitforge: checkpoint error: " << e.what() << '\n';
    return static_cast<int>(Exit::checkpoint);
  } catch (const LockBusyError& e) {
    err << "vitforge: " << e.what() << '\n';
    return static_cast<int>(Exit::busy);
  } catch (const std::exception& e) {
    err << "vitforge: error: " << e.what() << '\n';
    return static_cast<int>(Exit::usage);
  }
  return static_cast<int>(Exit::usage);
}

}  // namespace vitforge::cli
