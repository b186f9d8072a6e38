#include "lprobe/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "lprobe/error.hpp"
#include "lprobe/fs_util.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

using nlohmann::json;

namespace {

const char* arity_name(Arity arity) {
  return arity == Arity::TwoSpan ? "two_span" : "single_span";
}

json task_to_json(const TaskSpec& task) {
  return json{{"name", task.name},
              {"arity", arity_name(task.arity)},
              {"labels", task.labels},
              {"multi_label", task.multi_label}};
}

Span parse_span(const json& j, const std::string& where, const char* key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() ||
      !j[1].is_number_integer()) {
    throw Error(ErrorKind::Parse, where + ": `" + key + "` must be [start, end] integers");
  }
  return Span{j[0].get<std::int64_t>(), j[1].get<std::int64_t>()};
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

std::string span_str(const Span& s) {
  return "[" + std::to_string(s.start) + ", " + std::to_string(s.end) + ")";
}

ProbeExample parse_record(const json& rec, const TaskSpec& task, const std::string& where,
                          std::size_t index) {
  if (!rec.is_object()) throw Error(ErrorKind::Parse, where + ": record is not an object");
  ProbeExample ex;
  if (auto it = rec.find("sentence_id"); it != rec.end()) {
    if (!it->is_string()) throw Error(ErrorKind::Parse, where + ": `sentence_id` must be a string");
    ex.sentence_id = it->get<std::string>();
  } else {
    ex.sentence_id = std::to_string(index);
  }

  auto text = rec.find("text");
  if (text == rec.end()) throw Error(ErrorKind::Parse, where + ": missing `text`");
  if (text->is_string()) {
    ex.tokens = split_whitespace(text->get<std::string>());
  } else if (text->is_array()) {
    for (const auto& t : *text) {
      if (!t.is_string()) throw Error(ErrorKind::Parse, where + ": tokens must be strings");
      ex.tokens.push_back(t.get<std::string>());
    }
  } else {
    throw Error(ErrorKind::Parse, where + ": `text` must be a string or token array");
  }

  auto targets = rec.find("targets");
  if (targets == rec.end()) throw Error(ErrorKind::Parse, where + ": missing `targets`");
  if (!targets->is_array()) throw Error(ErrorKind::Parse, where + ": `targets` must be an array");

  for (std::size_t t = 0; t < targets->size(); ++t) {
    const json& tj = (*targets)[t];
    const std::string twhere = where + ", target " + std::to_string(t);
    if (!tj.is_object()) throw Error(ErrorKind::Parse, twhere + ": target is not an object");
    Target target;
    auto s1 = tj.find("span1");
    if (s1 == tj.end()) throw Error(ErrorKind::Parse, twhere + ": missing `span1`");
    target.span1 = parse_span(*s1, twhere, "span1");
    if (auto s2 = tj.find("span2"); s2 != tj.end() && !s2->is_null()) {
      target.span2 = parse_span(*s2, twhere, "span2");
    }

    auto lab = tj.find("label");
    if (lab == tj.end()) throw Error(ErrorKind::Parse, twhere + ": missing `label`");
    std::vector<std::string> names;
    if (lab->is_string()) {
      names.push_back(lab->get<std::string>());
    } else if (lab->is_array()) {
      for (const auto& l : *lab) {
        if (!l.is_string()) throw Error(ErrorKind::Parse, twhere + ": labels must be strings");
        names.push_back(l.get<std::string>());
      }
    } else {
      throw Error(ErrorKind::Parse, twhere + ": `label` must be a string or array");
    }
    std::set<std::size_t> gold;
    for (const auto& name : names) {
      auto idx = task.label_index(name);
      if (!idx) {
        throw Error(ErrorKind::UnknownLabel,
                    twhere + ": unknown label \"" + name + "\" for task " + task.name);
      }
      gold.insert(*idx);
    }
    target.gold.assign(gold.begin(), gold.end());
    ex.targets.push_back(std::move(target));
  }
  return ex;
}

}  // namespace

std::optional<std::size_t> TaskSpec::label_index(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels.begin());
}

void TaskSpec::validate() const {
  if (name.empty()) throw Error(ErrorKind::InvalidArgument, "task name is empty");
  if (labels.empty()) throw Error(ErrorKind::InvalidArgument, "task " + name + " has no labels");
  std::unordered_set<std::string> seen;
  for (const auto& l : labels) {
    if (!seen.insert(l).second) {
      throw Error(ErrorKind::InvalidArgument, "task " + name + " has duplicate label \"" + l + "\"");
    }
  }
}

std::uint64_t TaskSpec::fingerprint() const { return fnv1a64(serialize_task(*this)); }

TaskSpec parse_task(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, std::string("task file: ") + e.what());
  }
  TaskSpec task;
  try {
    task.name = j.at("name").get<std::string>();
    const auto arity = j.at("arity").get<std::string>();
    if (arity == "single_span") {
      task.arity = Arity::SingleSpan;
    } else if (arity == "two_span") {
      task.arity = Arity::TwoSpan;
    } else {
      throw Error(ErrorKind::Parse, "task file: unknown arity \"" + arity + "\"");
    }
    task.labels = j.at("labels").get<std::vector<std::string>>();
    task.multi_label = j.value("multi_label", false);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("task file: ") + e.what());
  }
  task.validate();
  return task;
}

TaskSpec load_task(const std::filesystem::path& path) { return parse_task(read_file(path)); }

std::string serialize_task(const TaskSpec& task) { return task_to_json(task).dump(); }

void save_task(const std::filesystem::path& path, const TaskSpec& task) {
  write_file_atomic(path, task_to_json(task).dump(2) + "\n");
}

void validate_example(const ProbeExample& ex, const TaskSpec& task, const std::string& where) {
  const std::size_t n = ex.tokens.size();
  for (std::size_t t = 0; t < ex.targets.size(); ++t) {
    const Target& target = ex.targets[t];
    const std::string twhere = where + ", target " + std::to_string(t);
    if (!target.span1.valid_for(n)) {
      throw Error(ErrorKind::SpanOutOfRange, twhere + ": span1 " + span_str(target.span1) +
                                                 " out of range for " + std::to_string(n) +
                                                 " tokens");
    }
    if (target.span2.has_value() != (task.arity == Arity::TwoSpan)) {
      throw Error(ErrorKind::ArityMismatch,
                  twhere + (target.span2 ? ": span2 present under single-span task "
                                         : ": span2 missing under two-span task ") +
                      task.name);
    }
    if (target.span2 && !target.span2->valid_for(n)) {
      throw Error(ErrorKind::SpanOutOfRange, twhere + ": span2 " + span_str(*target.span2) +
                                                 " out of range for " + std::to_string(n) +
                                                 " tokens");
    }
    for (std::size_t g : target.gold) {
      if (g >= task.num_labels()) {
        throw Error(ErrorKind::UnknownLabel, twhere + ": label index out of vocabulary");
      }
    }
    if (!std::is_sorted(target.gold.begin(), target.gold.end()) ||
        std::adjacent_find(target.gold.begin(), target.gold.end()) != target.gold.end()) {
      throw Error(ErrorKind::InvalidArgument, twhere + ": gold labels must be sorted and unique");
    }
    if (!task.multi_label && target.gold.size() != 1) {
      throw Error(ErrorKind::InvalidArgument,
                  twhere + ": single-label task requires exactly one gold label");
    }
  }
}

std::vector<ProbeExample> parse_annotations(const std::string& text, const TaskSpec& task) {
  task.validate();
  std::vector<ProbeExample> out;
  std::unordered_set<std::string> ids;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::Parse, where + ": " + e.what());
    }
    ProbeExample ex = parse_record(rec, task, where, out.size());
    validate_example(ex, task, where + " (sentence " + ex.sentence_id + ")");
    if (!ids.insert(ex.sentence_id).second) {
      throw Error(ErrorKind::DuplicateId, where + ": duplicate sentence_id " + ex.sentence_id);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<ProbeExample> load_annotations(const std::filesystem::path& path,
                                           const TaskSpec& task) {
  return parse_annotations(read_file(path), task);
}

std::string serialize_annotations(const std::vector<ProbeExample>& examples,
                                  const TaskSpec& task) {
  std::string out;
  for (const auto& ex : examples) {
    json targets = json::array();
    for (const auto& t : ex.targets) {
      json tj;
      tj["span1"] = {t.span1.start, t.span1.end};
      if (t.span2) tj["span2"] = {t.span2->start, t.span2->end};
      if (t.gold.size() == 1) {
        tj["label"] = task.labels.at(t.gold[0]);
      } else {
        json labels = json::array();
        for (std::size_t g : t.gold) labels.push_back(task.labels.at(g));
        tj["label"] = labels;
      }
      targets.push_back(std::move(tj));
    }
    json rec{{"sentence_id", ex.sentence_id}, {"text", ex.tokens}, {"targets", targets}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<ProbeExample>& examples, const TaskSpec& task) {
  write_file_atomic(path, serialize_annotations(examples, task));
}

DatasetSplit split_dataset(const std::vector<ProbeExample>& examples, SplitFractions fractions,
                           std::uint64_t seed) {
  if (examples.empty()) throw Error(ErrorKind::EmptyInput, "split_dataset: no examples");
  if (!(fractions.train > 0.0) || !(fractions.dev > 0.0) ||
      fractions.train + fractions.dev > 1.0 + 1e-12) {
    throw Error(ErrorKind::InvalidArgument,
                "split_dataset: fractions must be positive and sum to at most 1");
  }
  const std::size_t n = examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "split");
  // Fisher-Yates with our own index draw; std::shuffle's use of the engine is
  // implementation-defined.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  const auto n_train =
      std::min(n, static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n))));
  const auto n_dev = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(fractions.dev * static_cast<double>(n))));
  DatasetSplit split;
  for (std::size_t i = 0; i < n_train; ++i) split.train.push_back(examples[order[i]]);
  for (std::size_t i = n_train; i < n_train + n_dev; ++i) split.dev.push_back(examples[order[i]]);
  return split;
}

}  // namespace lprobe
