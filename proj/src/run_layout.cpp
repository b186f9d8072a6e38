#include "lprobe/run_layout.hpp"

#include <algorithm>

#include "json.hpp"
#include "lprobe/checkpoint.hpp"
#include "lprobe/error.hpp"
#include "lprobe/fs_util.hpp"

namespace lprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json(const TrainConfig& c) {
  return json{{"seed", c.seed},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"eval_interval", c.eval_interval},
              {"proj_dim", c.proj_dim},
              {"hidden_dim", c.hidden_dim}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.eval_interval = j.at("eval_interval").get<double>();
  c.proj_dim = j.at("proj_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  return c;
}

}  // namespace

std::string serialize_summary(const SeriesSummary& s) {
  json j;
  j["task"] = s.task;
  j["num_encoder_layers"] = s.num_encoder_layers;
  j["eval_split"] = s.eval_split;
  j["f1_by_layer"] = s.f1_by_layer;
  j["best_steps"] = s.best_steps;
  j["config"] = config_to_json(s.config);
  j["inputs"] = {{"task_file", s.inputs.task_file},
                 {"annotations", s.inputs.annotations},
                 {"store", s.inputs.store},
                 {"train_fraction", s.inputs.fractions.train},
                 {"dev_fraction", s.inputs.fractions.dev},
                 {"split_seed", s.inputs.split_seed}};
  j["kernels"] = s.kernels;
  return j.dump(2) + "\n";
}

SeriesSummary parse_summary(const std::string& text) {
  try {
    const json j = json::parse(text);
    SeriesSummary s;
    s.task = j.at("task").get<std::string>();
    s.num_encoder_layers = j.at("num_encoder_layers").get<std::size_t>();
    s.eval_split = j.at("eval_split").get<std::string>();
    s.f1_by_layer = j.at("f1_by_layer").get<std::vector<double>>();
    s.best_steps = j.at("best_steps").get<std::vector<std::size_t>>();
    s.config = config_from_json(j.at("config"));
    const json& in = j.at("inputs");
    s.inputs.task_file = in.at("task_file").get<std::string>();
    s.inputs.annotations = in.at("annotations").get<std::string>();
    s.inputs.store = in.at("store").get<std::string>();
    s.inputs.fractions.train = in.at("train_fraction").get<double>();
    s.inputs.fractions.dev = in.at("dev_fraction").get<double>();
    s.inputs.split_seed = in.at("split_seed").get<std::uint64_t>();
    s.kernels = j.value("kernels", std::string());
    if (s.f1_by_layer.size() != s.num_encoder_layers + 1) {
      throw Error(ErrorKind::ShapeMismatch, "series_summary: F1 vector length does not match L");
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("series_summary: ") + e.what());
  }
}

fs::path layer_dir(const fs::path& task_dir, std::size_t layer) {
  return task_dir / ("layer_" + std::to_string(layer));
}

void write_series(const fs::path& task_dir, const TrainedSeries& series,
                  const SeriesSummary& summary) {
  fs::create_directories(task_dir);
  save_task(task_dir / "task.json", series.task);
  for (std::size_t l = 0; l < series.probes.size(); ++l) {
    const fs::path dir = layer_dir(task_dir, l);
    fs::create_directories(dir);
    save_checkpoint(dir / "checkpoint", series.probes[l].params, series.task);
    std::string metrics;
    for (const auto& r : series.probes[l].history) {
      metrics += json{{"epoch", r.epoch},
                      {"step", r.step},
                      {"train_loss", r.train_loss},
                      {"dev_f1", r.dev_f1},
                      {"dev_loss", r.dev_loss}}
                     .dump();
      metrics += '\n';
    }
    write_file_atomic(dir / "metrics", metrics);
  }
  write_file_atomic(task_dir / "series_summary", serialize_summary(summary));
}

LoadedSeries load_series(const fs::path& task_dir) {
  LoadedSeries out;
  out.dir = task_dir;
  out.task = load_task(task_dir / "task.json");
  out.summary = parse_summary(read_file(task_dir / "series_summary"));
  for (std::size_t l = 0; l <= out.summary.num_encoder_layers; ++l) {
    const fs::path ckpt = layer_dir(task_dir, l) / "checkpoint";
    if (!fs::exists(ckpt)) {
      throw Error(ErrorKind::MissingInput, "missing checkpoint " + ckpt.string());
    }
    out.probes.push_back(load_checkpoint(ckpt, out.task));
    if (out.probes.back().mixing.layer_cap != l) {
      throw Error(ErrorKind::ShapeMismatch, ckpt.string() + " has the wrong layer cap");
    }
  }
  return out;
}

std::vector<fs::path> find_task_dirs(const fs::path& path) {
  if (fs::exists(path / "series_summary")) return {path};
  std::vector<fs::path> out;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_directory() && fs::exists(entry.path() / "series_summary")) {
        out.push_back(entry.path());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace lprobe
