#include "lprobe/trace.hpp"

#include <algorithm>
#include <unordered_map>

#include "json.hpp"
#include "lprobe/error.hpp"

namespace lprobe {

namespace {

std::vector<double> layer_means(const std::vector<std::vector<double>>& rows) {
  std::vector<double> mean(rows.front().size(), 0.0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) mean[c] += row[c];
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  return mean;
}

std::optional<std::size_t> best_non_gold(const std::vector<double>& mean, const LabelSet& gold) {
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < mean.size(); ++c) {
    if (std::find(gold.begin(), gold.end(), c) != gold.end()) continue;
    if (!best || mean[c] > mean[*best]) best = c;
  }
  return best;
}

}  // namespace

void finalize_trace(TargetTrace& t) {
  if (t.scores.empty() || t.scores.front().empty()) {
    throw Error(ErrorKind::InvalidArgument, "trace has no scores");
  }
  t.normalized.clear();
  double max_sum = 0.0;
  for (const auto& row : t.scores) {
    if (row.size() != t.scores.front().size()) {
      throw Error(ErrorKind::ShapeMismatch, "trace rows differ in label count");
    }
    double sum = 0.0;
    for (double v : row) sum += v;
    std::vector<double> norm(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) norm[c] = sum > 0.0 ? row[c] / sum : 0.0;
    t.normalized.push_back(std::move(norm));
    max_sum += *std::max_element(row.begin(), row.end());
  }
  t.ambiguity_score = max_sum / static_cast<double>(t.scores.size());

  const auto mean = layer_means(t.scores);
  t.top_label = static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
  t.top_label_mean = mean[t.top_label];
  t.competitor = best_non_gold(mean, t.gold);
  t.competitor_normalized = best_non_gold(layer_means(t.normalized), t.gold);
}

std::vector<TargetTrace> compile_traces(std::span<const ProbeParams> probes,
                                        const ActivationCache& cache,
                                        std::span<const ProbeExample> examples) {
  if (probes.empty()) throw Error(ErrorKind::MissingInput, "no probes to trace");
  for (std::size_t l = 0; l < probes.size(); ++l) {
    if (probes[l].mixing.layer_cap != l) {
      throw Error(ErrorKind::InvalidArgument,
                  "probe " + std::to_string(l) + " has layer_cap " +
                      std::to_string(probes[l].mixing.layer_cap));
    }
  }
  std::vector<TargetTrace> out;
  for (const auto& ex : examples) {
    const ActivationSet& acts = cache.at(ex.sentence_id);
    for (std::size_t t = 0; t < ex.targets.size(); ++t) {
      const Target& target = ex.targets[t];
      TargetTrace tr;
      tr.sentence_id = ex.sentence_id;
      tr.target_index = t;
      tr.span1 = target.span1;
      tr.span2 = target.span2;
      tr.gold = target.gold;
      for (const auto& probe : probes) tr.scores.push_back(forward(probe, acts, target));
      finalize_trace(tr);
      out.push_back(std::move(tr));
    }
  }
  return out;
}

std::vector<std::string> find_ambiguous(std::span<const TargetTrace> traces, double threshold,
                                        std::size_t min_edges) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "ambiguity threshold must lie in (0, 1]");
  }
  if (min_edges == 0) throw Error(ErrorKind::InvalidArgument, "min_edges must be positive");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : traces) {
    if (!counts.count(t.sentence_id)) {
      order.push_back(t.sentence_id);
      counts[t.sentence_id] = 0;
    }
    if (t.ambiguity_score <= threshold) ++counts[t.sentence_id];
  }
  std::vector<std::string> out;
  for (const auto& id : order) {
    if (counts[id] >= min_edges) out.push_back(id);
  }
  return out;
}

std::string serialize_traces(std::span<const TargetTrace> traces, const TaskSpec& task) {
  using nlohmann::json;
  auto label = [&](std::optional<std::size_t> c) {
    return c ? json(task.labels.at(*c)) : json(nullptr);
  };
  std::string out;
  for (const auto& t : traces) {
    json gold = json::array();
    for (std::size_t g : t.gold) gold.push_back(task.labels.at(g));
    json j;
    j["sentence_id"] = t.sentence_id;
    j["target_index"] = t.target_index;
    j["span1"] = {t.span1.start, t.span1.end};
    j["span2"] = t.span2 ? json{t.span2->start, t.span2->end} : json(nullptr);
    j["gold"] = gold;
    j["labels"] = task.labels;
    j["scores"] = t.scores;
    j["normalized_scores"] = t.normalized;
    j["top_label"] = task.labels.at(t.top_label);
    j["ambiguity_score"] = t.ambiguity_score;
    j["top_label_mean"] = t.top_label_mean;
    j["competitor"] = label(t.competitor);
    j["competitor_normalized"] = label(t.competitor_normalized);
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace lprobe
