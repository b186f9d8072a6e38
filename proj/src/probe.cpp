#include "lprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lprobe/error.hpp"
#include "lprobe/kernels.hpp"

namespace lprobe {

namespace {

void softmax_inplace(std::span<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void check_inputs(const ProbeParams& params, const ActivationSet& acts, const Target& target) {
  const ProbeShape& sh = params.shape;
  if (acts.num_layers() != sh.num_layers || acts.dim() != sh.dim) {
    throw Error(ErrorKind::ShapeMismatch,
                "activations for \"" + acts.sentence_id() + "\" have " +
                    std::to_string(acts.num_layers()) + " layers of dim " +
                    std::to_string(acts.dim()) + ", probe expects " +
                    std::to_string(sh.num_layers) + " of dim " + std::to_string(sh.dim));
  }
  if (target.span2.has_value() != (sh.slots == 2)) {
    throw Error(ErrorKind::ArityMismatch, "target arity does not match probe");
  }
  if (!target.span1.valid_for(acts.num_tokens()) ||
      (target.span2 && !target.span2->valid_for(acts.num_tokens()))) {
    throw Error(ErrorKind::SpanOutOfRange,
                "target span out of range for sentence \"" + acts.sentence_id() + "\"");
  }
}

// Intermediate values of one forward pass, kept for the backward pass.
struct ForwardCache {
  std::vector<std::size_t> tokens;  // sorted unique positions in span1 u span2
  std::vector<double> weights;      // mixing weights s, cap + 1
  std::vector<double> mixed;        // T x d, unscaled mix
  std::vector<double> scaled;       // T x d, gamma * mixed
  std::vector<double> projected;    // T x p
  struct Slot {
    std::vector<std::size_t> rows;  // rows into the T-indexed buffers
    std::vector<double> alpha;
  };
  std::vector<Slot> slots;
  std::vector<double> pooled;  // slots * p
  std::vector<double> hidden;  // tanh activations
  std::vector<double> logits;  // C
};

void mix_token(const ActivationSet& acts, std::span<const double> weights, std::size_t tok,
               std::span<double> out) {
  const auto& k = kernels::active();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t layer = 0; layer < weights.size(); ++layer) {
    k.axpy_f32(weights[layer], acts.token(layer, tok).data(), out.data(), out.size());
  }
}

ForwardCache run_forward(const ProbeParams& params, const ActivationSet& acts,
                         const Target& target) {
  check_inputs(params, acts, target);
  const ProbeShape& sh = params.shape;
  const auto& k = kernels::active();
  const std::size_t d = sh.dim;
  const std::size_t p = sh.proj_dim;
  ForwardCache c;

  std::vector<Span> spans{target.span1};
  if (target.span2) spans.push_back(*target.span2);
  for (const Span& s : spans) {
    for (auto t = s.start; t < s.end; ++t) c.tokens.push_back(static_cast<std::size_t>(t));
  }
  std::sort(c.tokens.begin(), c.tokens.end());
  c.tokens.erase(std::unique(c.tokens.begin(), c.tokens.end()), c.tokens.end());
  const std::size_t T = c.tokens.size();

  c.weights = params.mixing.weights();
  c.mixed.resize(T * d);
  c.scaled.resize(T * d);
  c.projected.resize(T * p);
  for (std::size_t r = 0; r < T; ++r) {
    std::span<double> m(c.mixed.data() + r * d, d);
    mix_token(acts, c.weights, c.tokens[r], m);
    for (std::size_t i = 0; i < d; ++i) c.scaled[r * d + i] = params.mixing.gamma * m[i];
    kernels::gemv(params.proj_w, params.proj_b, std::span<const double>(c.scaled).subspan(r * d, d),
                  std::span<double>(c.projected).subspan(r * p, p));
  }

  c.pooled.assign(sh.mlp_input(), 0.0);
  for (std::size_t slot = 0; slot < spans.size(); ++slot) {
    ForwardCache::Slot sc;
    const double* att = params.span_attention.data() + slot * p;
    for (auto t = spans[slot].start; t < spans[slot].end; ++t) {
      const auto row = static_cast<std::size_t>(
          std::lower_bound(c.tokens.begin(), c.tokens.end(), static_cast<std::size_t>(t)) -
          c.tokens.begin());
      sc.rows.push_back(row);
      sc.alpha.push_back(k.dot(att, c.projected.data() + row * p, p));
    }
    softmax_inplace(sc.alpha);
    double* out = c.pooled.data() + slot * p;
    for (std::size_t j = 0; j < sc.rows.size(); ++j) {
      k.axpy(sc.alpha[j], c.projected.data() + sc.rows[j] * p, out, p);
    }
    c.slots.push_back(std::move(sc));
  }

  c.hidden.resize(sh.hidden_dim);
  kernels::gemv(params.mlp_w1, params.mlp_b1, c.pooled, c.hidden);
  for (double& v : c.hidden) v = std::tanh(v);
  c.logits.resize(sh.num_labels);
  kernels::gemv(params.mlp_w2, params.mlp_b2, c.hidden, c.logits);
  return c;
}

void run_backward(const ProbeParams& params, const ActivationSet& acts, const ForwardCache& c,
                  std::span<const double> dlogits, ProbeParams& g) {
  const ProbeShape& sh = params.shape;
  const auto& k = kernels::active();
  const std::size_t d = sh.dim;
  const std::size_t p = sh.proj_dim;
  const std::size_t T = c.tokens.size();

  k.axpy(1.0, dlogits.data(), g.mlp_b2.data(), dlogits.size());
  kernels::outer_acc(dlogits, c.hidden, g.mlp_w2);
  std::vector<double> dpre(sh.hidden_dim, 0.0);
  kernels::gemv_t_acc(params.mlp_w2, dlogits, dpre);
  for (std::size_t j = 0; j < dpre.size(); ++j) dpre[j] *= 1.0 - c.hidden[j] * c.hidden[j];
  k.axpy(1.0, dpre.data(), g.mlp_b1.data(), dpre.size());
  kernels::outer_acc(dpre, c.pooled, g.mlp_w1);
  std::vector<double> dpooled(sh.mlp_input(), 0.0);
  kernels::gemv_t_acc(params.mlp_w1, dpre, dpooled);

  std::vector<double> dproj(T * p, 0.0);
  for (std::size_t slot = 0; slot < c.slots.size(); ++slot) {
    const auto& sc = c.slots[slot];
    const double* dv = dpooled.data() + slot * p;
    const double* att = params.span_attention.data() + slot * p;
    double* gatt = g.span_attention.data() + slot * p;
    std::vector<double> dalpha(sc.rows.size());
    double mean = 0.0;
    for (std::size_t j = 0; j < sc.rows.size(); ++j) {
      dalpha[j] = k.dot(c.projected.data() + sc.rows[j] * p, dv, p);
      mean += sc.alpha[j] * dalpha[j];
    }
    for (std::size_t j = 0; j < sc.rows.size(); ++j) {
      const std::size_t row = sc.rows[j];
      const double dscore = sc.alpha[j] * (dalpha[j] - mean);
      k.axpy(sc.alpha[j], dv, dproj.data() + row * p, p);
      k.axpy(dscore, att, dproj.data() + row * p, p);
      k.axpy(dscore, c.projected.data() + row * p, gatt, p);
    }
  }

  const std::size_t cap = params.mixing.layer_cap;
  std::vector<double> dweights(cap + 1, 0.0);
  std::vector<double> dscaled(d);
  for (std::size_t r = 0; r < T; ++r) {
    std::span<const double> dz(dproj.data() + r * p, p);
    k.axpy(1.0, dz.data(), g.proj_b.data(), p);
    kernels::outer_acc(dz, std::span<const double>(c.scaled).subspan(r * d, d), g.proj_w);
    std::fill(dscaled.begin(), dscaled.end(), 0.0);
    kernels::gemv_t_acc(params.proj_w, dz, dscaled);
    g.mixing.gamma += k.dot(dscaled.data(), c.mixed.data() + r * d, d);
    for (std::size_t layer = 0; layer <= cap; ++layer) {
      dweights[layer] +=
          params.mixing.gamma * k.dot_f32(acts.token(layer, c.tokens[r]).data(), dscaled.data(), d);
    }
  }
  double mean = 0.0;
  for (std::size_t layer = 0; layer <= cap; ++layer) mean += c.weights[layer] * dweights[layer];
  for (std::size_t layer = 0; layer <= cap; ++layer) {
    g.mixing.logits[layer] += c.weights[layer] * (dweights[layer] - mean);
  }
}

std::vector<double> gold_vector(const Target& target, std::size_t num_labels) {
  std::vector<double> y(num_labels, 0.0);
  for (std::size_t gidx : target.gold) {
    if (gidx >= num_labels) throw Error(ErrorKind::UnknownLabel, "gold label index out of range");
    y[gidx] = 1.0;
  }
  return y;
}

}  // namespace

std::vector<double> MixingParams::weights() const {
  if (layer_cap >= logits.size()) {
    throw Error(ErrorKind::InvalidArgument, "layer cap " + std::to_string(layer_cap) +
                                                " exceeds " + std::to_string(logits.size()) +
                                                " mixing logits");
  }
  std::vector<double> s(logits.begin(), logits.begin() + static_cast<std::ptrdiff_t>(layer_cap + 1));
  softmax_inplace(s);
  return s;
}

ProbeParams ProbeParams::zeros(const ProbeShape& shape, std::size_t layer_cap) {
  if (shape.slots != 1 && shape.slots != 2) {
    throw Error(ErrorKind::InvalidArgument, "probe must have 1 or 2 span slots");
  }
  if (shape.num_layers == 0 || shape.dim == 0 || shape.proj_dim == 0 || shape.hidden_dim == 0 ||
      shape.num_labels == 0) {
    throw Error(ErrorKind::InvalidArgument, "probe dimensions must be positive");
  }
  if (layer_cap >= shape.num_layers) {
    throw Error(ErrorKind::InvalidArgument, "layer cap " + std::to_string(layer_cap) +
                                                " exceeds L = " +
                                                std::to_string(shape.num_layers - 1));
  }
  ProbeParams p;
  p.shape = shape;
  p.mixing.logits.assign(shape.num_layers, 0.0);
  p.mixing.gamma = 0.0;
  p.mixing.layer_cap = layer_cap;
  p.proj_w.assign(shape.proj_dim * shape.dim, 0.0);
  p.proj_b.assign(shape.proj_dim, 0.0);
  p.span_attention.assign(static_cast<std::size_t>(shape.slots) * shape.proj_dim, 0.0);
  p.mlp_w1.assign(shape.hidden_dim * shape.mlp_input(), 0.0);
  p.mlp_b1.assign(shape.hidden_dim, 0.0);
  p.mlp_w2.assign(shape.num_labels * shape.hidden_dim, 0.0);
  p.mlp_b2.assign(shape.num_labels, 0.0);
  return p;
}

void ProbeParams::for_each_tensor(
    const std::function<void(std::string_view, std::span<double>)>& fn) {
  fn("mix_logits", mixing.logits);
  fn("mix_gamma", std::span<double>(&mixing.gamma, 1));
  fn("proj_w", proj_w);
  fn("proj_b", proj_b);
  fn("span_attention", span_attention);
  fn("mlp_w1", mlp_w1);
  fn("mlp_b1", mlp_b1);
  fn("mlp_w2", mlp_w2);
  fn("mlp_b2", mlp_b2);
}

void ProbeParams::for_each_tensor(
    const std::function<void(std::string_view, std::span<const double>)>& fn) const {
  const_cast<ProbeParams*>(this)->for_each_tensor(
      [&](std::string_view name, std::span<double> t) { fn(name, t); });
}

std::size_t ProbeParams::num_parameters() const {
  std::size_t n = 0;
  for_each_tensor([&](std::string_view, std::span<const double> t) { n += t.size(); });
  return n;
}

bool ProbeParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](std::string_view, std::span<const double> t) {
    for (double v : t) ok = ok && std::isfinite(v);
  });
  return ok;
}

ProbeParams init_probe(const ProbeShape& shape, std::size_t layer_cap, Rng& rng) {
  ProbeParams p = ProbeParams::zeros(shape, layer_cap);
  p.mixing.gamma = 1.0;
  auto fill = [&rng](std::vector<double>& w, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w) v = dist(rng);
  };
  fill(p.proj_w, shape.dim);
  fill(p.span_attention, shape.proj_dim);
  fill(p.mlp_w1, shape.mlp_input());
  fill(p.mlp_w2, shape.hidden_dim);
  return p;
}

std::vector<double> scalar_mix(const ActivationSet& acts, const MixingParams& mixing) {
  if (mixing.logits.size() > acts.num_layers() || mixing.layer_cap >= acts.num_layers()) {
    throw Error(ErrorKind::ShapeMismatch, "mixing has more layers than the activations");
  }
  const auto weights = mixing.weights();
  const std::size_t d = acts.dim();
  std::vector<double> out(acts.num_tokens() * d);
  for (std::size_t t = 0; t < acts.num_tokens(); ++t) {
    std::span<double> row(out.data() + t * d, d);
    mix_token(acts, weights, t, row);
    for (double& v : row) v *= mixing.gamma;
  }
  return out;
}

std::vector<double> span_pool(std::span<const double> projected, std::size_t proj_dim,
                              const Span& span, std::span<const double> attention) {
  if (proj_dim == 0 || projected.size() % proj_dim != 0 || attention.size() != proj_dim) {
    throw Error(ErrorKind::ShapeMismatch, "span_pool: inconsistent dimensions");
  }
  const std::size_t n = projected.size() / proj_dim;
  if (!span.valid_for(n)) throw Error(ErrorKind::SpanOutOfRange, "span_pool: invalid span");
  const auto& k = kernels::active();
  std::vector<double> alpha;
  for (auto t = span.start; t < span.end; ++t) {
    alpha.push_back(k.dot(attention.data(), projected.data() + t * proj_dim, proj_dim));
  }
  softmax_inplace(alpha);
  std::vector<double> out(proj_dim, 0.0);
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    k.axpy(alpha[j], projected.data() + (span.start + static_cast<std::int64_t>(j)) * proj_dim,
           out.data(), proj_dim);
  }
  return out;
}

std::vector<double> forward(const ProbeParams& params, const ActivationSet& acts,
                            const Target& target) {
  const ForwardCache c = run_forward(params, acts, target);
  std::vector<double> probs(c.logits.size());
  std::transform(c.logits.begin(), c.logits.end(), probs.begin(), sigmoid);
  return probs;
}

double batch_loss(const ProbeParams& params, std::span<const TrainItem> batch) {
  if (batch.empty()) throw Error(ErrorKind::EmptyInput, "empty batch");
  const std::size_t C = params.shape.num_labels;
  double total = 0.0;
  for (const TrainItem& item : batch) {
    const ForwardCache c = run_forward(params, *item.acts, *item.target);
    const auto y = gold_vector(*item.target, C);
    for (std::size_t j = 0; j < C; ++j) total += softplus(c.logits[j]) - y[j] * c.logits[j];
  }
  const double loss = total / static_cast<double>(batch.size() * C);
  if (!std::isfinite(loss)) throw Error(ErrorKind::NonFinite, "non-finite loss");
  return loss;
}

LossAndGradients loss_and_gradients(const ProbeParams& params, std::span<const TrainItem> batch) {
  if (batch.empty()) throw Error(ErrorKind::EmptyInput, "empty batch");
  const std::size_t C = params.shape.num_labels;
  const double scale = 1.0 / static_cast<double>(batch.size() * C);
  LossAndGradients out{0.0, ProbeParams::zeros(params.shape, params.mixing.layer_cap)};
  double total = 0.0;
  std::vector<double> dlogits(C);
  for (const TrainItem& item : batch) {
    const ForwardCache c = run_forward(params, *item.acts, *item.target);
    const auto y = gold_vector(*item.target, C);
    for (std::size_t j = 0; j < C; ++j) {
      total += softplus(c.logits[j]) - y[j] * c.logits[j];
      dlogits[j] = (sigmoid(c.logits[j]) - y[j]) * scale;
    }
    run_backward(params, *item.acts, c, dlogits, out.grad);
  }
  out.loss = total * scale;
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::NonFinite, "non-finite loss");
  return out;
}

std::vector<std::size_t> predict_labels(std::span<const double> probs, bool multi_label) {
  std::vector<std::size_t> out;
  if (probs.empty()) return out;
  if (multi_label) {
    for (std::size_t j = 0; j < probs.size(); ++j) {
      if (probs[j] > 0.5) out.push_back(j);
    }
    return out;
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < probs.size(); ++j) {
    if (probs[j] > probs[best]) best = j;
  }
  out.push_back(best);
  return out;
}

}  // namespace lprobe
