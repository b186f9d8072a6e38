#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lprobe/activation_store.hpp"
#include "lprobe/annotations.hpp"

namespace lprobe {

/// Synthetic dataset whose labels are linearly decodable from layers >= the
/// planted layer and independent of every layer below it.
struct PlantedSpec {
  std::string task_name = "planted";
  std::uint32_t num_encoder_layers = 6;  // L
  std::uint32_t dim = 32;
  std::size_t num_sentences = 700;
  std::size_t num_labels = 5;  // C
  std::uint32_t planted_layer = 4;  // k*, in [1, L]
  double noise = 0.1;  // sigma
  /// Signal norm in units of sigma.
  double signal_scale = 5.0;
  Arity arity = Arity::SingleSpan;
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 12;
  std::size_t max_targets = 3;
  std::size_t max_span = 3;

  /// Throws Error(InvalidArgument) for k* outside [1, L], C < 2, C > d, and
  /// similar inconsistencies.
  void validate() const;
};

struct PlantedDataset {
  TaskSpec task;
  std::vector<ActivationSet> activations;
  std::vector<ProbeExample> examples;
  /// Unit-norm orthogonal directions, one per label (C x d).
  std::vector<std::vector<double>> signals;
};

PlantedDataset generate_planted(const PlantedSpec& spec, std::uint64_t seed);

struct PlantedPaths {
  std::filesystem::path store;
  std::filesystem::path annotations;
  std::filesystem::path task;
};

/// Conventional file names inside an output directory.
PlantedPaths planted_paths(const std::filesystem::path& dir);

/// Writes store, annotations and task file. Validates the spec before touching
/// the filesystem.
void write_planted(const PlantedSpec& spec, std::uint64_t seed, const PlantedPaths& paths);

}  // namespace lprobe
