#include "lprobe/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "lprobe/checkpoint.hpp"
#include "lprobe/error.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

namespace {

std::vector<std::span<double>> tensors(ProbeParams& p) {
  std::vector<std::span<double>> out;
  p.for_each_tensor([&](std::string_view, std::span<double> t) { out.push_back(t); });
  return out;
}

// Bias-corrected first/second moment estimates per parameter.
class Adam {
 public:
  Adam(const ProbeParams& like, double lr)
      : m_(ProbeParams::zeros(like.shape, like.mixing.layer_cap)),
        v_(ProbeParams::zeros(like.shape, like.mixing.layer_cap)),
        lr_(lr) {}

  void step(ProbeParams& params, ProbeParams& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto ps = tensors(params);
    auto gs = tensors(grad);
    auto ms = tensors(m_);
    auto vs = tensors(v_);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      for (std::size_t i = 0; i < ps[k].size(); ++i) {
        const double g = gs[k][i];
        ms[k][i] = kBeta1 * ms[k][i] + (1.0 - kBeta1) * g;
        vs[k][i] = kBeta2 * vs[k][i] + (1.0 - kBeta2) * g * g;
        ps[k][i] -= lr_ * (ms[k][i] / c1) / (std::sqrt(vs[k][i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  ProbeParams m_;
  ProbeParams v_;
  double lr_;
  std::size_t t_ = 0;
};

ProbeShape shape_for(const TaskSpec& task, const StoreManifest& m, const TrainConfig& config) {
  ProbeShape sh;
  sh.num_layers = m.num_layers();
  sh.dim = m.dim;
  sh.proj_dim = config.proj_dim;
  sh.hidden_dim = config.hidden_dim;
  sh.num_labels = task.num_labels();
  sh.slots = span_slots(task.arity);
  return sh;
}

void require_loaded(const ActivationCache& cache, std::span<const ProbeExample> examples) {
  for (const auto& ex : examples) {
    if (!cache.contains(ex.sentence_id)) {
      throw Error(ErrorKind::MissingInput,
                  "missing activations for sentence \"" + ex.sentence_id + "\"");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorKind::InvalidArgument, "invalid training config: " + msg);
  };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (max_epochs == 0) fail("max_epochs must be positive");
  if (patience == 0) fail("patience must be positive");
  if (patience > max_epochs) fail("patience must not exceed max_epochs");
  if (!(eval_interval > 0.0) || !std::isfinite(eval_interval)) fail("eval_interval must be positive");
  if (proj_dim == 0 || hidden_dim == 0) fail("probe dimensions must be positive");
}

ActivationCache load_cache(const StoreManifest& manifest,
                           std::span<const std::vector<ProbeExample>* const> example_sets) {
  ActivationCache cache(manifest);
  for (const auto* set : example_sets) {
    for (const auto& ex : *set) {
      if (!manifest.contains(ex.sentence_id)) {
        throw Error(ErrorKind::MissingInput, "missing activations for sentence \"" +
                                                 ex.sentence_id + "\" in " +
                                                 manifest.path.string());
      }
      if (cache.contains(ex.sentence_id)) continue;
      ActivationSet acts = read_activations(manifest, ex.sentence_id);
      if (acts.num_tokens() != ex.tokens.size()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "sentence \"" + ex.sentence_id + "\" has " + std::to_string(ex.tokens.size()) +
                        " tokens but " + std::to_string(acts.num_tokens()) + " activation rows");
      }
      cache.insert(std::move(acts));
    }
  }
  return cache;
}

Predictions predict(const ProbeParams& params, const TaskSpec& task, const ActivationCache& cache,
                    std::span<const ProbeExample> examples) {
  Predictions out;
  for (const auto& ex : examples) {
    const ActivationSet& acts = cache.at(ex.sentence_id);
    for (const auto& target : ex.targets) {
      out.predicted.push_back(predict_labels(forward(params, acts, target), task.multi_label));
      out.gold.push_back(target.gold);
    }
  }
  return out;
}

double evaluate_f1(const ProbeParams& params, const TaskSpec& task, const ActivationCache& cache,
                   std::span<const ProbeExample> examples) {
  const Predictions p = predict(params, task, cache, examples);
  return micro_f1(p.predicted, p.gold);
}

ProbeResult train_probe(const TaskSpec& task, const ActivationCache& cache,
                        std::span<const ProbeExample> train, std::span<const ProbeExample> dev,
                        std::size_t layer_cap, const TrainConfig& config) {
  config.validate();
  task.validate();
  const StoreManifest& manifest = cache.manifest();
  if (layer_cap > manifest.num_encoder_layers) {
    throw Error(ErrorKind::InvalidArgument, "layer_cap " + std::to_string(layer_cap) +
                                                " exceeds store L = " +
                                                std::to_string(manifest.num_encoder_layers));
  }
  require_loaded(cache, train);
  require_loaded(cache, dev);

  std::vector<TrainItem> items;
  for (const auto& ex : train) {
    const ActivationSet& acts = cache.at(ex.sentence_id);
    for (const auto& target : ex.targets) items.push_back({&acts, &target});
  }
  if (items.empty()) throw Error(ErrorKind::EmptyInput, "training set has no targets");
  std::vector<TrainItem> dev_items;
  for (const auto& ex : dev) {
    const ActivationSet& acts = cache.at(ex.sentence_id);
    for (const auto& target : ex.targets) dev_items.push_back({&acts, &target});
  }
  if (dev_items.empty()) throw Error(ErrorKind::EmptyInput, "dev set has no targets");

  Rng init_rng = make_rng(config.seed, "train/init");
  Rng shuffle_rng = make_rng(config.seed, "train/shuffle");
  ProbeParams params = init_probe(shape_for(task, manifest, config), layer_cap, init_rng);
  Adam adam(params, config.learning_rate);

  const std::size_t steps_per_epoch = (items.size() + config.batch_size - 1) / config.batch_size;
  const auto eval_every = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(config.eval_interval * static_cast<double>(steps_per_epoch))));

  ProbeResult best;
  best.dev_f1 = -1.0;
  std::size_t step = 0;
  const std::size_t patience_steps = config.patience * steps_per_epoch;
  double loss_sum = 0.0;
  std::size_t loss_steps = 0;
  std::vector<std::size_t> order(items.size());
  std::vector<TrainItem> batch;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng() % i)]);
    }
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(items[order[i]]);
      LossAndGradients lg = loss_and_gradients(params, batch);
      adam.step(params, lg.grad);
      if (!params.all_finite()) {
        throw Error(ErrorKind::NonFinite, "non-finite parameters after step " + std::to_string(step + 1));
      }
      ++step;
      loss_sum += lg.loss;
      ++loss_steps;

      if (step % eval_every != 0) continue;
      ProbeParams snapshot = round_to_f32(params);
      const double f1 = evaluate_f1(snapshot, task, cache, dev);
      const double dev_loss = batch_loss(snapshot, dev_items);
      best.history.push_back(
          {epoch, step, loss_sum / static_cast<double>(loss_steps), f1, dev_loss});
      loss_sum = 0.0;
      loss_steps = 0;
      if (f1 > best.dev_f1 || (f1 == best.dev_f1 && dev_loss < best.dev_loss)) {
        best.dev_f1 = f1;
        best.dev_loss = dev_loss;
        best.best_step = step;
        best.params = std::move(snapshot);
      } else if (step - best.best_step >= patience_steps) {
        return best;
      }
    }
  }
  if (best.dev_f1 < 0.0) {
    // Fewer steps than one evaluation interval: evaluate the final state.
    best.params = round_to_f32(params);
    best.dev_f1 = evaluate_f1(best.params, task, cache, dev);
    best.dev_loss = batch_loss(best.params, dev_items);
    best.best_step = step;
    best.history.push_back(
        {config.max_epochs, step, loss_steps ? loss_sum / static_cast<double>(loss_steps) : 0.0,
         best.dev_f1, best.dev_loss});
  }
  return best;
}

std::vector<double> TrainedSeries::f1_by_layer() const {
  std::vector<double> out;
  for (const auto& p : probes) out.push_back(p.dev_f1);
  return out;
}

TrainedSeries train_series(const TaskSpec& task, const ActivationCache& cache,
                           const DatasetSplit& split, const TrainConfig& config, std::size_t jobs,
                           const LogFn& log) {
  config.validate();
  const std::size_t layers = cache.manifest().num_layers();
  TrainedSeries series;
  series.task = task;
  series.probes.resize(layers);

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(layers);
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t cap = next++; cap < layers; cap = next++) {
      try {
        series.probes[cap] = train_probe(task, cache, split.train, split.dev, cap, config);
        if (log) {
          std::lock_guard lock(log_mu);
          log("task " + task.name + " layer_cap " + std::to_string(cap) + ": dev F1 " +
              std::to_string(series.probes[cap].dev_f1) + " (best step " +
              std::to_string(series.probes[cap].best_step) + ")");
        }
      } catch (...) {
        errors[cap] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(jobs, 1, layers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return series;
}

}  // namespace lprobe
