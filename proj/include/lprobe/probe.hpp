#pragma once

// Edge-probing classifier over frozen layer activations:
//
//   h_i   = gamma * sum_{l <= cap} softmax(a)_l * H_l[i]     scalar mix
//   z_i   = W_p h_i + b_p                                     projection (d -> p)
//   v_k   = sum_{i in span_k} softmax_i(w_k . z_i) z_i        span pooling per slot
//   u     = tanh(W_1 [v_1; v_2] + b_1)                        hidden (-> h)
//   P(c)  = sigmoid(W_2 u + b_2)_c                            C independent labels
//
// Layers above `cap` are never read, so a probe with cap = l sees exactly
// layers 0..l. Only tokens inside the target spans are read.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "lprobe/activation_store.hpp"
#include "lprobe/annotations.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

struct ProbeShape {
  std::size_t num_layers = 1;  // L + 1
  std::size_t dim = 0;         // d
  std::size_t proj_dim = 256;  // p
  std::size_t hidden_dim = 256;
  std::size_t num_labels = 0;  // C
  int slots = 1;               // 1 single-span, 2 two-span

  std::size_t mlp_input() const { return static_cast<std::size_t>(slots) * proj_dim; }
  bool operator==(const ProbeShape&) const = default;
};

struct MixingParams {
  std::vector<double> logits;  // a, length L + 1
  double gamma = 1.0;
  std::size_t layer_cap = 0;

  /// softmax over logits[0..layer_cap]; exactly layer_cap + 1 entries.
  std::vector<double> weights() const;
};

struct ProbeParams {
  ProbeShape shape;
  MixingParams mixing;
  std::vector<double> proj_w;          // p x d
  std::vector<double> proj_b;          // p
  std::vector<double> span_attention;  // slots x p
  std::vector<double> mlp_w1;          // hidden x (slots * p)
  std::vector<double> mlp_b1;          // hidden
  std::vector<double> mlp_w2;          // C x hidden
  std::vector<double> mlp_b2;          // C

  /// All-zero parameters of the given shape; also used as a gradient buffer.
  static ProbeParams zeros(const ProbeShape& shape, std::size_t layer_cap);

  /// Visits every tensor in declared (checkpoint) order.
  void for_each_tensor(const std::function<void(std::string_view, std::span<double>)>& fn);
  void for_each_tensor(
      const std::function<void(std::string_view, std::span<const double>)>& fn) const;

  std::size_t num_parameters() const;
  bool all_finite() const;
};

/// Uniform mixing (a = 0), gamma = 1, weights from U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// zero biases.
ProbeParams init_probe(const ProbeShape& shape, std::size_t layer_cap, Rng& rng);

/// Mixed vectors for every token, n x d row-major.
std::vector<double> scalar_mix(const ActivationSet& acts, const MixingParams& mixing);

/// Attention-weighted sum over the in-span rows of `projected` (n x p).
std::vector<double> span_pool(std::span<const double> projected, std::size_t proj_dim,
                              const Span& span, std::span<const double> attention);

/// Per-label probabilities, each in (0, 1).
std::vector<double> forward(const ProbeParams& params, const ActivationSet& acts,
                            const Target& target);

struct TrainItem {
  const ActivationSet* acts;
  const Target* target;  // gold labels taken from target->gold
};

struct LossAndGradients {
  double loss = 0.0;
  ProbeParams grad;
};

/// Mean binary cross-entropy over every (target, label) pair of the batch.
LossAndGradients loss_and_gradients(const ProbeParams& params, std::span<const TrainItem> batch);

/// Loss only; used by finite-difference checks.
double batch_loss(const ProbeParams& params, std::span<const TrainItem> batch);

/// Single-label: argmax (lowest index on ties). Multi-label: every label with
/// probability > 0.5.
std::vector<std::size_t> predict_labels(std::span<const double> probs, bool multi_label);

}  // namespace lprobe
