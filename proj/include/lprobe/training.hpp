#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lprobe/activation_store.hpp"
#include "lprobe/annotations.hpp"
#include "lprobe/metrics.hpp"
#include "lprobe/probe.hpp"

namespace lprobe {

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 40;
  /// Epochs without a dev improvement before stopping.
  std::size_t patience = 5;
  /// Fraction of an epoch between dev evaluations.
  double eval_interval = 0.5;
  std::size_t proj_dim = 256;
  std::size_t hidden_dim = 256;

  void validate() const;
};

struct EvalRecord {
  std::size_t epoch = 0;  // 1-based epoch in progress when evaluated
  std::size_t step = 0;
  double train_loss = 0.0;  // mean over the steps since the previous evaluation
  double dev_f1 = 0.0;
  double dev_loss = 0.0;
};

struct ProbeResult {
  ProbeParams params;  // best-dev checkpoint, float32-rounded
  double dev_f1 = 0.0;
  double dev_loss = 0.0;
  std::size_t best_step = 0;
  std::vector<EvalRecord> history;
};

/// Loads the activations of every example into a cache. Throws
/// Error(MissingInput) naming the first sentence absent from the store.
ActivationCache load_cache(const StoreManifest& manifest,
                           std::span<const std::vector<ProbeExample>* const> example_sets);

struct Predictions {
  std::vector<LabelSet> predicted;
  std::vector<LabelSet> gold;
};

Predictions predict(const ProbeParams& params, const TaskSpec& task, const ActivationCache& cache,
                    std::span<const ProbeExample> examples);

double evaluate_f1(const ProbeParams& params, const TaskSpec& task, const ActivationCache& cache,
                   std::span<const ProbeExample> examples);

/// Trains one probe that reads layers 0..layer_cap. Deterministic given the
/// config; returns the checkpoint with the best dev F1 seen. Equal F1 counts
/// as an improvement only when dev loss drops; training stops once `patience`
/// epochs pass without one.
ProbeResult train_probe(const TaskSpec& task, const ActivationCache& cache,
                        std::span<const ProbeExample> train, std::span<const ProbeExample> dev,
                        std::size_t layer_cap, const TrainConfig& config);

struct TrainedSeries {
  TaskSpec task;
  std::vector<ProbeResult> probes;  // entry l trained with layer_cap = l

  std::vector<double> f1_by_layer() const;
  std::size_t num_encoder_layers() const { return probes.empty() ? 0 : probes.size() - 1; }
};

using LogFn = std::function<void(const std::string&)>;

/// Trains P^(0)..P^(L) independently, each from a fresh initialization drawn
/// from the same seed-derived stream. Up to `jobs` probes run concurrently.
TrainedSeries train_series(const TaskSpec& task, const ActivationCache& cache,
                           const DatasetSplit& split, const TrainConfig& config,
                           std::size_t jobs = 1, const LogFn& log = {});

}  // namespace lprobe
