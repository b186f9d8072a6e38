#include <random>

#include "doctest.h"
#include "lprobe/error.hpp"
#include "lprobe/training.hpp"
#include "test_util.hpp"

using namespace lprobe;

namespace {

template <typename Fn>
ErrorKind error_kind(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.patience = 0;
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::InvalidArgument);
  c = TrainConfig{};
  c.patience = c.max_epochs + 1;
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::InvalidArgument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::InvalidArgument);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::InvalidArgument);
  c = TrainConfig{};
  c.eval_interval = -0.5;
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("planted series: low below k*, high from k* on") {
  test::TempDir dir;
  const test::PlantedFixture fx(test::small_planted(2), 3, dir.path());
  const TrainConfig config = test::fast_config();
  const TrainedSeries series = train_series(fx.task, fx.cache, fx.split, config, 2);
  const auto f1 = series.f1_by_layer();
  REQUIRE(f1.size() == 5);
  CHECK(series.num_encoder_layers() == 4);
  for (std::size_t l = 0; l < 5; ++l) {
    CAPTURE(l);
    CHECK(series.probes[l].params.mixing.layer_cap == l);
    if (l < 2) {
      CHECK(f1[l] < 0.5);
    } else {
      CHECK(f1[l] > 0.95);
    }
    CHECK_FALSE(series.probes[l].history.empty());
  }

  // A probe that can see the signal is confident on held-out targets.
  std::size_t confident = 0, total = 0;
  for (const auto& ex : fx.split.dev) {
    for (const auto& t : ex.targets) {
      const auto probs = forward(series.probes[4].params, fx.cache.at(ex.sentence_id), t);
      confident += probs[t.gold[0]] > 0.9;
      ++total;
    }
  }
  CHECK(static_cast<double>(confident) / static_cast<double>(total) > 0.9);
}

TEST_CASE("training is deterministic, including across worker counts") {
  test::TempDir dir;
  const test::PlantedFixture fx(test::small_planted(1, 120), 5, dir.path());
  TrainConfig config = test::fast_config();
  config.max_epochs = 4;
  config.patience = 2;
  const TrainedSeries a = train_series(fx.task, fx.cache, fx.split, config, 1);
  const TrainedSeries b = train_series(fx.task, fx.cache, fx.split, config, 3);
  CHECK(a.f1_by_layer() == b.f1_by_layer());
  for (std::size_t l = 0; l < a.probes.size(); ++l) {
    CHECK(test::flatten(a.probes[l].params) == test::flatten(b.probes[l].params));
    CHECK(a.probes[l].best_step == b.probes[l].best_step);
  }
  config.seed = 2;
  const ProbeResult other = train_probe(fx.task, fx.cache, fx.split.train, fx.split.dev, 1, config);
  CHECK(test::flatten(other.params) != test::flatten(a.probes[1].params));
}

TEST_CASE("best checkpoint is the best dev evaluation") {
  test::TempDir dir;
  const test::PlantedFixture fx(test::small_planted(3, 120), 6, dir.path());
  TrainConfig config = test::fast_config();
  config.max_epochs = 6;
  config.patience = 3;
  const ProbeResult r = train_probe(fx.task, fx.cache, fx.split.train, fx.split.dev, 4, config);
  double best = -1.0;
  for (const auto& e : r.history) best = std::max(best, e.dev_f1);
  CHECK(r.dev_f1 == best);
  CHECK(evaluate_f1(r.params, fx.task, fx.cache, fx.split.dev) == r.dev_f1);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].step > r.history[i - 1].step);
}

TEST_CASE("an L = 0 store yields a baseline-only series") {
  test::TempDir dir;
  std::mt19937_64 rng(7);
  const TaskSpec task{"zero", Arity::SingleSpan, {"a", "b"}, false};
  std::vector<ProbeExample> examples;
  std::vector<ActivationSet> sets;
  for (int s = 0; s < 20; ++s) {
    const std::string id = "s" + std::to_string(s);
    examples.push_back({id, {"x", "y", "z"}, {{Span{0, 2}, std::nullopt, {rng() % 2}}}});
    sets.push_back(test::random_acts(id, 1, 3, 4, rng));
  }
  test::write_store(dir / "z.lpb", 0, 4, sets);
  const DatasetSplit split = split_dataset(examples, {0.5, 0.5}, 1);
  const std::vector<const std::vector<ProbeExample>*> all{&split.train, &split.dev};
  const ActivationCache cache = load_cache(open_store(dir / "z.lpb"), all);
  TrainConfig config = test::fast_config();
  config.max_epochs = 2;
  config.patience = 1;
  const TrainedSeries series = train_series(task, cache, split, config);
  CHECK(series.probes.size() == 1);
  CHECK(series.num_encoder_layers() == 0);
  CHECK(error_kind([&] { train_probe(task, cache, split.train, split.dev, 1, config); }) ==
        ErrorKind::InvalidArgument);
}

TEST_CASE("missing or mismatched activations") {
  test::TempDir dir;
  std::mt19937_64 rng(8);
  test::write_store(dir / "s.lpb", 1, 4, {test::random_acts("a", 2, 3, 4, rng)});
  const StoreManifest m = open_store(dir / "s.lpb");
  const std::vector<ProbeExample> missing{{"b", {"x", "y", "z"}, {}}};
  const std::vector<const std::vector<ProbeExample>*> sets{&missing};
  CHECK(error_kind([&] { load_cache(m, sets); }) == ErrorKind::MissingInput);
  const std::vector<ProbeExample> wrong_len{{"a", {"x", "y"}, {}}};
  const std::vector<const std::vector<ProbeExample>*> sets2{&wrong_len};
  CHECK(error_kind([&] { load_cache(m, sets2); }) == ErrorKind::ShapeMismatch);

  const TaskSpec task{"t", Arity::SingleSpan, {"a", "b"}, false};
  const ActivationCache empty_cache(m);
  const std::vector<ProbeExample> ok{{"a", {"x", "y", "z"}, {{Span{0, 1}, std::nullopt, {0}}}}};
  CHECK(error_kind([&] { train_probe(task, empty_cache, ok, ok, 0, test::fast_config()); }) ==
        ErrorKind::MissingInput);
}

TEST_CASE("empty training or dev targets are rejected") {
  test::TempDir dir;
  std::mt19937_64 rng(9);
  test::write_store(dir / "s.lpb", 1, 4, {test::random_acts("a", 2, 3, 4, rng)});
  const std::vector<ProbeExample> none{{"a", {"x", "y", "z"}, {}}};
  const std::vector<ProbeExample> some{{"a", {"x", "y", "z"}, {{Span{0, 1}, std::nullopt, {0}}}}};
  const std::vector<const std::vector<ProbeExample>*> sets{&some};
  const ActivationCache cache = load_cache(open_store(dir / "s.lpb"), sets);
  const TaskSpec task{"t", Arity::SingleSpan, {"a", "b"}, false};
  CHECK(error_kind([&] { train_probe(task, cache, none, some, 0, test::fast_config()); }) ==
        ErrorKind::EmptyInput);
  CHECK(error_kind([&] { train_probe(task, cache, some, none, 0, test::fast_config()); }) ==
        ErrorKind::EmptyInput);
}
