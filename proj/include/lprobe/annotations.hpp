#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lprobe {

enum class Arity { SingleSpan, TwoSpan };

inline int span_slots(Arity arity) { return arity == Arity::TwoSpan ? 2 : 1; }

/// A probing task: label vocabulary plus target shape.
struct TaskSpec {
  std::string name;
  Arity arity = Arity::SingleSpan;
  std::vector<std::string> labels;
  bool multi_label = false;

  std::size_t num_labels() const { return labels.size(); }

  /// Index of `label` in the vocabulary, or nullopt.
  std::optional<std::size_t> label_index(const std::string& label) const;

  /// Throws Error(InvalidArgument) on empty or duplicate labels.
  void validate() const;

  /// Stable 64-bit fingerprint of the canonical serialization; stored in
  /// checkpoints to catch probes loaded against the wrong vocabulary.
  std::uint64_t fingerprint() const;

  bool operator==(const TaskSpec&) const = default;
};

/// Half-open token interval [start, end).
struct Span {
  std::int64_t start = 0;
  std::int64_t end = 0;

  std::int64_t length() const { return end - start; }
  bool valid_for(std::size_t num_tokens) const {
    return 0 <= start && start < end && end <= static_cast<std::int64_t>(num_tokens);
  }
  bool contains(std::int64_t token) const { return start <= token && token < end; }

  bool operator==(const Span&) const = default;
};

struct Target {
  Span span1;
  std::optional<Span> span2;
  /// Gold label indices into TaskSpec::labels, sorted ascending, unique.
  std::vector<std::size_t> gold;

  bool operator==(const Target&) const = default;
};

struct ProbeExample {
  std::string sentence_id;
  std::vector<std::string> tokens;
  std::vector<Target> targets;

  bool operator==(const ProbeExample&) const = default;
};

// Task files are a single JSON object:
//   {"name": "...", "arity": "single_span" | "two_span",
//    "labels": [...], "multi_label": false}
TaskSpec parse_task(const std::string& json_text);
TaskSpec load_task(const std::filesystem::path& path);
std::string serialize_task(const TaskSpec& task);
void save_task(const std::filesystem::path& path, const TaskSpec& task);

/// Validates one example against the task; throws the matching ErrorKind with
/// `where` prefixed to the message.
void validate_example(const ProbeExample& example, const TaskSpec& task,
                      const std::string& where);

/// Parses line-delimited annotation records. Blank lines are skipped; records
/// without a `sentence_id` get their zero-based record index as id.
std::vector<ProbeExample> parse_annotations(const std::string& text, const TaskSpec& task);
std::vector<ProbeExample> load_annotations(const std::filesystem::path& path,
                                           const TaskSpec& task);

/// Canonical form: token arrays, labels as a string for singleton gold sets and
/// as an array (vocabulary order) otherwise.
std::string serialize_annotations(const std::vector<ProbeExample>& examples,
                                  const TaskSpec& task);
void write_annotations(const std::filesystem::path& path,
                       const std::vector<ProbeExample>& examples, const TaskSpec& task);

struct SplitFractions {
  double train = 0.8;
  double dev = 0.2;
};

struct DatasetSplit {
  std::vector<ProbeExample> train;
  std::vector<ProbeExample> dev;
};

/// Partitions by sentence after a seeded shuffle. Sentences that fall in
/// neither fraction (when train + dev < 1) are dropped.
DatasetSplit split_dataset(const std::vector<ProbeExample>& examples,
                           SplitFractions fractions, std::uint64_t seed);

}  // namespace lprobe
