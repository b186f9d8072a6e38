#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lprobe/activation_store.hpp"
#include "lprobe/annotations.hpp"
#include "lprobe/metrics.hpp"
#include "lprobe/probe.hpp"

namespace lprobe {

struct TargetTrace {
  std::string sentence_id;
  std::size_t target_index = 0;
  Span span1;
  std::optional<Span> span2;
  LabelSet gold;
  /// scores[l][c] = P^(l)(c | spans), raw sigmoid outputs, l = 0..L.
  std::vector<std::vector<double>> scores;
  /// scores renormalized to sum 1 over labels at each layer.
  std::vector<std::vector<double>> normalized;

  /// Mean over layers of the per-layer maximum raw score. The ambiguity
  /// filter compares this against its threshold.
  double ambiguity_score = 0.0;
  /// Label with the highest layer-averaged raw score, and that average.
  std::size_t top_label = 0;
  double top_label_mean = 0.0;
  /// Non-gold label with the highest layer-averaged score (raw / normalized);
  /// unset when every label is gold.
  std::optional<std::size_t> competitor;
  std::optional<std::size_t> competitor_normalized;
};

/// Fills the derived fields (top label, ambiguity, competitors, normalized
/// scores) from `scores` and `gold`.
void finalize_trace(TargetTrace& trace);

/// One trace per target of every example, in example/target order. `probes`
/// holds P^(0)..P^(L); probe l must have layer_cap l.
std::vector<TargetTrace> compile_traces(std::span<const ProbeParams> probes,
                                        const ActivationCache& cache,
                                        std::span<const ProbeExample> examples);

/// Sentences with at least `min_edges` targets whose ambiguity score is
/// <= threshold, in order of first appearance.
std::vector<std::string> find_ambiguous(std::span<const TargetTrace> traces,
                                        double threshold = 0.7, std::size_t min_edges = 2);

/// One JSON object per trace, per line.
std::string serialize_traces(std::span<const TargetTrace> traces, const TaskSpec& task);

}  // namespace lprobe
