#pragma once

// On-disk layout of a training run:
//
//   <run>/<task>/task.json
//   <run>/<task>/series_summary          JSON: scores, config, inputs
//   <run>/<task>/layer_<l>/checkpoint    probe P^(l)
//   <run>/<task>/layer_<l>/metrics       JSON lines: epoch, step, train_loss, dev_f1

#include <filesystem>
#include <string>
#include <vector>

#include "lprobe/annotations.hpp"
#include "lprobe/probe.hpp"
#include "lprobe/training.hpp"

namespace lprobe {

struct RunInputs {
  std::string task_file;
  std::string annotations;
  std::string store;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
};

struct SeriesSummary {
  std::string task;
  std::size_t num_encoder_layers = 0;
  std::string eval_split = "dev";
  std::vector<double> f1_by_layer;
  std::vector<std::size_t> best_steps;
  TrainConfig config;
  RunInputs inputs;
  std::string kernels;
};

std::string serialize_summary(const SeriesSummary& summary);
SeriesSummary parse_summary(const std::string& text);

std::filesystem::path layer_dir(const std::filesystem::path& task_dir, std::size_t layer);

/// Writes every file of the layout into `task_dir` (created if needed).
void write_series(const std::filesystem::path& task_dir, const TrainedSeries& series,
                  const SeriesSummary& summary);

struct LoadedSeries {
  std::filesystem::path dir;
  TaskSpec task;
  SeriesSummary summary;
  std::vector<ProbeParams> probes;
};

/// Throws Error(MissingInput) when a checkpoint is missing.
LoadedSeries load_series(const std::filesystem::path& task_dir);

/// `path` itself when it holds a series_summary, otherwise its immediate
/// subdirectories that do, sorted by name.
std::vector<std::filesystem::path> find_task_dirs(const std::filesystem::path& path);

}  // namespace lprobe
