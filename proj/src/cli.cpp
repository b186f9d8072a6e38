#include "lprobe/cli.hpp"

#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lprobe/activation_store.hpp"
#include "lprobe/annotations.hpp"
#include "lprobe/error.hpp"
#include "lprobe/fs_util.hpp"
#include "lprobe/kernels.hpp"
#include "lprobe/metrics.hpp"
#include "lprobe/planted.hpp"
#include "lprobe/run_layout.hpp"
#include "lprobe/trace.hpp"
#include "lprobe/training.hpp"

namespace lprobe::cli {

namespace fs = std::filesystem;

namespace {

struct SynthOptions {
  fs::path out;
  PlantedSpec spec;
  bool two_span = false;
  std::uint64_t seed = 1;
};

struct TrainOptions {
  fs::path task;
  fs::path annotations;
  fs::path store;
  fs::path out;
  SplitFractions fractions;
  TrainConfig config;
  std::size_t jobs = 1;
};

struct ReportOptions {
  std::vector<fs::path> runs;
  fs::path out;
};

struct TraceOptions {
  fs::path run;
  fs::path out;
  double threshold = 0.7;
  std::size_t min_edges = 2;
  std::string split = "dev";
};

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::InvalidArgument ? kUsageError : kDataError;
}

int cmd_validate(const fs::path& store, std::ostream& out) {
  const StoreManifest m = open_store(store);
  out << "store " << store.string() << "\n"
      << "encoder " << m.encoder_name << "\n"
      << "L " << m.num_encoder_layers << "\n"
      << "d " << m.dim << "\n"
      << "sentences " << m.entries.size() << "\n";
  const ValidationReport report = validate_store(store);
  for (const auto& row : report.rows) {
    out << "  " << row.sentence_id << " shape (" << (m.num_encoder_layers + 1) << ", "
        << row.num_tokens << ", " << m.dim << ")\n";
  }
  out << "ok\n";
  return kOk;
}

int cmd_synth(SynthOptions opt, std::ostream& out) {
  opt.spec.arity = opt.two_span ? Arity::TwoSpan : Arity::SingleSpan;
  opt.spec.validate();
  fs::create_directories(opt.out);
  const PlantedPaths paths = planted_paths(opt.out);
  write_planted(opt.spec, opt.seed, paths);
  out << "wrote " << paths.store.string() << "\n"
      << "wrote " << paths.annotations.string() << "\n"
      << "wrote " << paths.task.string() << "\n";
  return kOk;
}

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  opt.config.validate();
  const TaskSpec task = load_task(opt.task);
  const auto examples = load_annotations(opt.annotations, task);
  const StoreManifest manifest = open_store(opt.store);
  const DatasetSplit split = split_dataset(examples, opt.fractions, opt.config.seed);
  const std::vector<ProbeExample>* sets[] = {&split.train, &split.dev};
  const ActivationCache cache = load_cache(manifest, sets);

  err << "training " << (manifest.num_encoder_layers + 1) << " probes for task " << task.name
      << " (" << split.train.size() << " train / " << split.dev.size() << " dev sentences, "
      << kernels::active().name << " kernels)\n";
  const TrainedSeries series = train_series(task, cache, split, opt.config, opt.jobs,
                                            [&err](const std::string& msg) { err << msg << "\n"; });

  SeriesSummary summary;
  summary.task = task.name;
  summary.num_encoder_layers = manifest.num_encoder_layers;
  summary.f1_by_layer = series.f1_by_layer();
  for (const auto& p : series.probes) summary.best_steps.push_back(p.best_step);
  summary.config = opt.config;
  summary.inputs = {fs::absolute(opt.task).lexically_normal().string(),
                    fs::absolute(opt.annotations).lexically_normal().string(),
                    fs::absolute(opt.store).lexically_normal().string(), opt.fractions,
                    opt.config.seed};
  summary.kernels = kernels::active().name;

  const bool created_root = !fs::exists(opt.out);
  const fs::path final_dir = opt.out / task.name;
  const fs::path partial = opt.out / ("." + task.name + ".partial");
  try {
    fs::remove_all(partial);
    write_series(partial, series, summary);
    fs::remove_all(final_dir);
    fs::rename(partial, final_dir);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(partial, ec);
    if (created_root) fs::remove_all(opt.out, ec);
    throw;
  }
  out << "wrote " << final_dir.string() << "\n";
  for (std::size_t l = 0; l < summary.f1_by_layer.size(); ++l) {
    out << "  layer_" << l << " dev F1 " << std::setprecision(6) << summary.f1_by_layer[l] << "\n";
  }
  return kOk;
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << *v;
  return s.str();
}

int cmd_report(const ReportOptions& opt, std::ostream& out) {
  std::vector<LayerProfile> profiles;
  for (const auto& run : opt.runs) {
    const auto dirs = find_task_dirs(run);
    if (dirs.empty()) {
      throw Error(ErrorKind::MissingInput, "no series_summary under " + run.string());
    }
    for (const auto& dir : dirs) {
      const LoadedSeries s = load_series(dir);
      const ProbeParams& full = s.probes.back();
      profiles.push_back(build_profile(s.task.name, s.summary.f1_by_layer, full.mixing.weights(),
                                       full.mixing.gamma, s.summary.eval_split));
    }
  }
  const std::string text = serialize_profiles(profiles);
  const fs::path target = opt.out.empty() ? opt.runs.front() / "profiles.jsonl" : opt.out;
  write_file_atomic(target, text);

  std::stable_sort(profiles.begin(), profiles.end(),
                   [](const auto& a, const auto& b) { return a.task < b.task; });
  out << std::left << std::setw(20) << "task" << std::right << std::setw(8) << "F1(0)"
      << std::setw(8) << "F1(L)" << std::setw(8) << "cog" << std::setw(10) << "E[layer]"
      << std::setw(8) << "K(s)" << std::setw(10) << "K(delta)" << "\n";
  for (const auto& p : profiles) {
    out << std::left << std::setw(20) << p.task << std::right << std::fixed << std::setprecision(3)
        << std::setw(8) << p.f1_by_layer.front() << std::setw(8) << p.f1_by_layer.back()
        << std::setw(8) << p.center_of_gravity << std::setw(10) << fmt_opt(p.expected_layer)
        << std::setw(8) << p.kl_mix << std::setw(10) << fmt_opt(p.kl_delta) << "\n";
  }
  out << "wrote " << target.string() << "\n";
  return kOk;
}

int cmd_trace(const TraceOptions& opt, std::ostream& out) {
  if (!(opt.threshold > 0.0 && opt.threshold <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "--threshold must lie in (0, 1]");
  }
  const auto dirs = find_task_dirs(opt.run);
  if (dirs.empty()) throw Error(ErrorKind::MissingInput, "no series_summary under " + opt.run.string());
  for (const auto& dir : dirs) {
    const LoadedSeries s = load_series(dir);
    const auto examples = load_annotations(s.summary.inputs.annotations, s.task);
    std::vector<ProbeExample> selected;
    if (opt.split == "all") {
      selected = examples;
    } else {
      DatasetSplit split =
          split_dataset(examples, s.summary.inputs.fractions, s.summary.inputs.split_seed);
      selected = opt.split == "train" ? std::move(split.train) : std::move(split.dev);
    }
    const StoreManifest manifest = open_store(s.summary.inputs.store);
    const std::vector<ProbeExample>* sets[] = {&selected};
    const ActivationCache cache = load_cache(manifest, sets);
    const auto traces = compile_traces(s.probes, cache, selected);
    const auto ambiguous = find_ambiguous(traces, opt.threshold, opt.min_edges);

    const fs::path target = opt.out.empty() ? dir : opt.out / s.task.name;
    fs::create_directories(target);
    write_file_atomic(target / "traces.jsonl", serialize_traces(traces, s.task));
    nlohmann::json amb{{"task", s.task.name},
                       {"split", opt.split},
                       {"threshold", opt.threshold},
                       {"min_edges", opt.min_edges},
                       {"sentences", ambiguous}};
    write_file_atomic(target / "ambiguous.json", amb.dump(2) + "\n");
    out << s.task.name << ": " << traces.size() << " traces, " << ambiguous.size()
        << " ambiguous sentences -> " << target.string() << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-wise edge probing over frozen encoder activations", "lprobe"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI/TOML config file; [train] holds train options, flags override");
  std::string kernel_name = "auto";
  app.add_option("--kernels", kernel_name, "Inner-loop backend: auto, scalar, avx2, neon")
      ->capture_default_str();

  fs::path validate_path;
  auto* validate = app.add_subcommand("validate", "Check every invariant of an activation store");
  validate->add_option("store", validate_path, "Activation store")->required()->check(CLI::ExistingFile);

  SynthOptions synth_opt;
  auto* synth = app.add_subcommand("synth", "Generate a planted-layer synthetic dataset");
  synth->add_option("--out", synth_opt.out, "Output directory")->required();
  synth->add_option("--seed", synth_opt.seed, "Root seed")->capture_default_str();
  synth->add_option("--task-name", synth_opt.spec.task_name)->capture_default_str();
  synth->add_option("--layers", synth_opt.spec.num_encoder_layers, "Encoder layers L")->capture_default_str();
  synth->add_option("--dim", synth_opt.spec.dim, "Activation width d")->capture_default_str();
  synth->add_option("--sentences", synth_opt.spec.num_sentences)->capture_default_str();
  synth->add_option("--labels", synth_opt.spec.num_labels, "Label count C")->capture_default_str();
  synth->add_option("--planted-layer", synth_opt.spec.planted_layer, "First layer carrying the signal")
      ->capture_default_str();
  synth->add_option("--noise", synth_opt.spec.noise, "Noise standard deviation")->capture_default_str();
  synth->add_option("--signal-scale", synth_opt.spec.signal_scale, "Signal norm in units of noise")
      ->capture_default_str();
  synth->add_flag("--two-span", synth_opt.two_span, "Emit two-span targets");

  TrainOptions train_opt;
  auto* train = app.add_subcommand("train", "Train the cumulative probe series for one task");
  train->add_option("--task", train_opt.task, "Task file")->required();
  train->add_option("--annotations", train_opt.annotations, "Annotation file")->required();
  train->add_option("--store", train_opt.store, "Activation store")->required();
  train->add_option("--out", train_opt.out, "Run directory")->required();
  train->add_option("--seed", train_opt.config.seed, "Root seed")->capture_default_str();
  train->add_option("--jobs", train_opt.jobs, "Probes trained concurrently")->capture_default_str();
  train->add_option("--train-fraction", train_opt.fractions.train)->capture_default_str();
  train->add_option("--dev-fraction", train_opt.fractions.dev)->capture_default_str();
  train->add_option("--batch-size", train_opt.config.batch_size)->capture_default_str();
  train->add_option("--learning-rate", train_opt.config.learning_rate)->capture_default_str();
  train->add_option("--max-epochs", train_opt.config.max_epochs)->capture_default_str();
  train->add_option("--patience", train_opt.config.patience, "Epochs without dev improvement before stopping")
      ->capture_default_str();
  train->add_option("--eval-interval", train_opt.config.eval_interval, "Epoch fraction between evaluations")
      ->capture_default_str();
  train->add_option("--proj-dim", train_opt.config.proj_dim)->capture_default_str();
  train->add_option("--hidden-dim", train_opt.config.hidden_dim)->capture_default_str();

  ReportOptions report_opt;
  auto* report = app.add_subcommand("report", "Compute layer profiles for trained runs");
  report->add_option("runs", report_opt.runs, "Run or task directories")->required();
  report->add_option("--out", report_opt.out, "Profiles file (default <first run>/profiles.jsonl)");

  TraceOptions trace_opt;
  auto* trace = app.add_subcommand("trace", "Export per-target layer traces");
  trace->add_option("run", trace_opt.run, "Run or task directory")->required();
  trace->add_option("--out", trace_opt.out, "Output directory (default: each task directory)");
  trace->add_option("--threshold", trace_opt.threshold)->capture_default_str();
  trace->add_option("--min-edges", trace_opt.min_edges)->capture_default_str();
  trace->add_option("--split", trace_opt.split, "dev, train or all")
      ->check(CLI::IsMember({"dev", "train", "all"}))
      ->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }
  if (!kernels::select(kernel_name)) {
    err << "error: kernel backend \"" << kernel_name << "\" is not available\n";
    return kUsageError;
  }

  try {
    if (*validate) return cmd_validate(validate_path, out);
    if (*synth) return cmd_synth(synth_opt, out);
    if (*train) return cmd_train(train_opt, out, err);
    if (*report) return cmd_report(report_opt, out);
    if (*trace) return cmd_trace(trace_opt, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsageError;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace lprobe::cli
