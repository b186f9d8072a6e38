#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lprobe {

using LabelSet = std::vector<std::size_t>;

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// Global TP/FP/FN over all (target, label) pairs. Label sets need not be sorted.
F1Counts count_f1(std::span<const LabelSet> predictions, std::span<const LabelSet> golds);

/// 2PR / (P + R) from the counts; 0 when P + R = 0.
double f1_from_counts(const F1Counts& counts);

double micro_f1(std::span<const LabelSet> predictions, std::span<const LabelSet> golds);

/// sum_l l * s_l. Requires a distribution (nonnegative, sums to 1 within 1e-6).
double center_of_gravity(std::span<const double> weights);

/// delta[l - 1] = f1[l] - f1[l - 1] for l = 1..L.
std::vector<double> differential_scores(std::span<const double> f1_by_layer);

/// (sum_l l * delta_l) / (sum_l delta_l) with delta[0] standing for layer 1.
/// Throws Error(UndefinedResult) when the denominator vanishes.
double expected_layer(std::span<const double> delta);

/// Negative entries clamped to 0, then renormalized. Throws
/// Error(UndefinedResult) when nothing positive remains.
std::vector<double> clamp_normalize(std::span<const double> values);

/// KL(p || uniform) = ln K - H(p), over clamp_normalize(p).
double kl_from_uniform(std::span<const double> values);

struct LayerProfile {
  std::string task;
  std::string eval_split = "dev";
  std::vector<double> f1_by_layer;
  std::vector<double> delta;        // layers 1..L
  std::vector<double> mix_weights;  // from the full-model probe
  double gamma = 1.0;
  double center_of_gravity = 0.0;
  std::optional<double> expected_layer;  // nullopt when undefined
  double kl_mix = 0.0;
  std::optional<double> kl_delta;  // nullopt when no delta is positive
  std::vector<double> mix_bars;    // mix weights normalized to sum 1
  std::optional<std::vector<double>> delta_bars;  // clamped + renormalized delta
};

/// Assembles every statistic from a series' scores and the mixing weights of
/// its full-model probe. Degenerate statistics are left unset, not NaN.
LayerProfile build_profile(const std::string& task, std::span<const double> f1_by_layer,
                           std::span<const double> full_mix_weights, double full_gamma,
                           const std::string& eval_split = "dev");

/// One JSON object per line, sorted by task name.
std::string serialize_profiles(std::vector<LayerProfile> profiles);

}  // namespace lprobe
