#include "lprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "lprobe/error.hpp"

namespace lprobe {

namespace {

LabelSet sorted_unique(const LabelSet& s) {
  LabelSet out = s;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

F1Counts count_f1(std::span<const LabelSet> predictions, std::span<const LabelSet> golds) {
  if (predictions.size() != golds.size()) {
    throw Error(ErrorKind::InvalidArgument, "micro_f1: predictions and golds differ in length");
  }
  F1Counts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const LabelSet pred = sorted_unique(predictions[i]);
    const LabelSet gold = sorted_unique(golds[i]);
    LabelSet common;
    std::set_intersection(pred.begin(), pred.end(), gold.begin(), gold.end(),
                          std::back_inserter(common));
    c.tp += common.size();
    c.fp += pred.size() - common.size();
    c.fn += gold.size() - common.size();
  }
  return c;
}

double f1_from_counts(const F1Counts& c) {
  const double tp = static_cast<double>(c.tp);
  const double precision = c.tp + c.fp == 0 ? 0.0 : tp / static_cast<double>(c.tp + c.fp);
  const double recall = c.tp + c.fn == 0 ? 0.0 : tp / static_cast<double>(c.tp + c.fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double micro_f1(std::span<const LabelSet> predictions, std::span<const LabelSet> golds) {
  return f1_from_counts(count_f1(predictions, golds));
}

double center_of_gravity(std::span<const double> weights) {
  if (weights.empty()) throw Error(ErrorKind::InvalidArgument, "center_of_gravity: empty weights");
  double sum = 0.0;
  double cog = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!(weights[l] >= 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "center_of_gravity: negative or NaN weight");
    }
    sum += weights[l];
    cog += static_cast<double>(l) * weights[l];
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw Error(ErrorKind::InvalidArgument, "center_of_gravity: weights do not sum to 1");
  }
  return cog;
}

std::vector<double> differential_scores(std::span<const double> f1_by_layer) {
  if (f1_by_layer.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "differential_scores: need at least two layers");
  }
  std::vector<double> delta(f1_by_layer.size() - 1);
  for (std::size_t l = 1; l < f1_by_layer.size(); ++l) delta[l - 1] = f1_by_layer[l] - f1_by_layer[l - 1];
  return delta;
}

double expected_layer(std::span<const double> delta) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    num += static_cast<double>(i + 1) * delta[i];
    den += delta[i];
  }
  if (delta.empty() || std::abs(den) < 1e-12) {
    throw Error(ErrorKind::UndefinedResult, "expected_layer: differential scores sum to zero");
  }
  return num / den;
}

std::vector<double> clamp_normalize(std::span<const double> values) {
  std::vector<double> p(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) throw Error(ErrorKind::InvalidArgument, "clamp_normalize: NaN input");
    p[i] = std::max(values[i], 0.0);
    sum += p[i];
  }
  if (!(sum > 0.0)) {
    throw Error(ErrorKind::UndefinedResult, "no positive mass left after clamping");
  }
  for (double& v : p) v /= sum;
  return p;
}

double kl_from_uniform(std::span<const double> values) {
  const std::vector<double> p = clamp_normalize(values);
  const double log_k = std::log(static_cast<double>(p.size()));
  double kl = 0.0;
  for (double v : p) {
    if (v > 0.0) kl += v * (std::log(v) + log_k);
  }
  return std::max(kl, 0.0);
}

LayerProfile build_profile(const std::string& task, std::span<const double> f1_by_layer,
                           std::span<const double> full_mix_weights, double full_gamma,
                           const std::string& eval_split) {
  if (f1_by_layer.empty()) throw Error(ErrorKind::EmptyInput, "build_profile: empty F1 series");
  if (full_mix_weights.size() != f1_by_layer.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "build_profile: mixing weights and F1 series cover different layer counts");
  }
  LayerProfile prof;
  prof.task = task;
  prof.eval_split = eval_split;
  prof.f1_by_layer.assign(f1_by_layer.begin(), f1_by_layer.end());
  prof.mix_weights.assign(full_mix_weights.begin(), full_mix_weights.end());
  prof.gamma = full_gamma;
  prof.center_of_gravity = center_of_gravity(full_mix_weights);
  prof.kl_mix = kl_from_uniform(full_mix_weights);
  prof.mix_bars = clamp_normalize(full_mix_weights);
  if (f1_by_layer.size() >= 2) {
    prof.delta = differential_scores(f1_by_layer);
    try {
      prof.expected_layer = expected_layer(prof.delta);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UndefinedResult) throw;
    }
    try {
      prof.delta_bars = clamp_normalize(prof.delta);
      prof.kl_delta = kl_from_uniform(prof.delta);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UndefinedResult) throw;
    }
  }
  return prof;
}

std::string serialize_profiles(std::vector<LayerProfile> profiles) {
  using nlohmann::json;
  std::stable_sort(profiles.begin(), profiles.end(),
                   [](const LayerProfile& a, const LayerProfile& b) { return a.task < b.task; });
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  std::string out;
  for (const auto& p : profiles) {
    json j;
    j["task"] = p.task;
    j["eval_split"] = p.eval_split;
    j["num_encoder_layers"] = p.f1_by_layer.empty() ? 0 : p.f1_by_layer.size() - 1;
    j["f1_by_layer"] = p.f1_by_layer;
    j["delta"] = p.delta;
    j["mix_weights"] = p.mix_weights;
    j["gamma"] = p.gamma;
    j["center_of_gravity"] = p.center_of_gravity;
    j["expected_layer"] = opt(p.expected_layer);
    j["expected_layer_defined"] = p.expected_layer.has_value();
    j["kl_mix"] = p.kl_mix;
    j["kl_delta"] = opt(p.kl_delta);
    j["delta_normalization"] = "clamp_negative_then_renormalize";
    j["bars"] = {{"mix", p.mix_bars},
                 {"delta", p.delta_bars ? json(*p.delta_bars) : json(nullptr)}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace lprobe
