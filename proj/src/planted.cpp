#include "lprobe/planted.hpp"

#include <cmath>
#include <random>

#include "lprobe/error.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

namespace {

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Gram-Schmidt over Gaussian draws.
std::vector<std::vector<double>> orthonormal_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> out;
  while (out.size() < rows) {
    std::vector<double> v(dim);
    for (auto& x : v) x = normal(rng);
    for (const auto& u : out) {
      double proj = 0.0;
      for (std::size_t i = 0; i < dim; ++i) proj += v[i] * u[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

void PlantedSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
  if (planted_layer < 1 || planted_layer > num_encoder_layers) {
    fail("planted layer " + std::to_string(planted_layer) + " out of range [1, " +
         std::to_string(num_encoder_layers) + "]");
  }
  if (num_labels < 2) fail("planted data needs at least 2 labels");
  if (num_labels > dim) fail("planted data needs num_labels <= dim for orthogonal signals");
  if (num_sentences == 0) fail("planted data needs at least one sentence");
  if (!(noise > 0.0) || !std::isfinite(noise)) fail("noise must be positive");
  if (!(signal_scale >= 0.0) || !std::isfinite(signal_scale)) fail("signal scale must be >= 0");
  if (min_tokens < 1 || min_tokens > max_tokens) fail("invalid sentence length range");
  if (max_targets < 1 || max_span < 1) fail("max_targets and max_span must be positive");
  if (task_name.empty()) fail("task name is empty");
}

PlantedDataset generate_planted(const PlantedSpec& spec, std::uint64_t seed) {
  spec.validate();
  PlantedDataset ds;
  ds.task.name = spec.task_name;
  ds.task.arity = spec.arity;
  for (std::size_t c = 0; c < spec.num_labels; ++c) ds.task.labels.push_back("L" + std::to_string(c));

  Rng signal_rng = make_rng(seed, "planted/signals");
  ds.signals = orthonormal_rows(spec.num_labels, spec.dim, signal_rng);

  Rng layout_rng = make_rng(seed, "planted/layout");
  Rng noise_rng = make_rng(seed, "planted/noise");
  std::normal_distribution<double> normal(0.0, spec.noise);
  const double amplitude = spec.signal_scale * spec.noise;
  const std::size_t layers = spec.num_encoder_layers + 1u;

  const int width = static_cast<int>(std::to_string(spec.num_sentences).size());
  for (std::size_t s = 0; s < spec.num_sentences; ++s) {
    std::string id = std::to_string(s);
    id = "s" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;

    ProbeExample ex;
    ex.sentence_id = id;
    const std::size_t n = uniform_index(layout_rng, spec.min_tokens, spec.max_tokens);
    for (std::size_t t = 0; t < n; ++t) ex.tokens.push_back("tok" + std::to_string(t));

    auto random_span = [&] {
      const std::size_t len = uniform_index(layout_rng, 1, std::min(spec.max_span, n));
      const std::size_t start = uniform_index(layout_rng, 0, n - len);
      return Span{static_cast<std::int64_t>(start), static_cast<std::int64_t>(start + len)};
    };

    // span1s within a sentence are disjoint so every signal-carrying token
    // belongs to exactly one target.
    auto overlaps = [&](const Span& s) {
      for (const auto& other : ex.targets) {
        if (s.start < other.span1.end && other.span1.start < s.end) return true;
      }
      return false;
    };
    const std::size_t num_targets = uniform_index(layout_rng, 1, spec.max_targets);
    for (std::size_t t = 0; t < num_targets; ++t) {
      Target target;
      target.span1 = random_span();
      for (int attempt = 0; attempt < 8 && overlaps(target.span1); ++attempt) {
        target.span1 = random_span();
      }
      if (overlaps(target.span1)) continue;
      if (spec.arity == Arity::TwoSpan) target.span2 = random_span();
      target.gold = {uniform_index(layout_rng, 0, spec.num_labels - 1)};
      ex.targets.push_back(std::move(target));
    }

    std::vector<double> buf(layers * n * spec.dim);
    for (auto& x : buf) x = normal(noise_rng);
    for (const auto& target : ex.targets) {
      const auto& dir = ds.signals[target.gold[0]];
      for (std::size_t layer = spec.planted_layer; layer < layers; ++layer) {
        for (auto tok = target.span1.start; tok < target.span1.end; ++tok) {
          double* row = buf.data() + (layer * n + static_cast<std::size_t>(tok)) * spec.dim;
          for (std::size_t i = 0; i < spec.dim; ++i) row[i] += amplitude * dir[i];
        }
      }
    }
    std::vector<float> data(buf.begin(), buf.end());
    ds.activations.emplace_back(id, layers, n, spec.dim, std::move(data));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

PlantedPaths planted_paths(const std::filesystem::path& dir) {
  return {dir / "activations.lpb", dir / "annotations.jsonl", dir / "task.json"};
}

void write_planted(const PlantedSpec& spec, std::uint64_t seed, const PlantedPaths& paths) {
  spec.validate();
  const PlantedDataset ds = generate_planted(spec, seed);
  StoreWriter writer(paths.store, "planted", spec.num_encoder_layers, spec.dim);
  for (const auto& acts : ds.activations) writer.add(acts);
  write_annotations(paths.annotations, ds.examples, ds.task);
  save_task(paths.task, ds.task);
  writer.finish();
}

}  // namespace lprobe
