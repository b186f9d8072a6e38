#pragma once

// Binary container for frozen per-layer token activations.
//
// All integers and floats little-endian.
//
//   header   "LPROBE01" | u32 version | u32 L | u32 d | u32 name_len | name
//   records  u32 id_len | id | u32 n | f32[(L+1) * n * d]  (layer-major, row-major)
//   index    u64 count | count * (u32 id_len | id | u64 record_offset | u32 n)
//   footer   u64 index_offset | "LPINDEX1"
//
// Layer 0 holds the non-contextual embeddings; layers 1..L the encoder blocks.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace lprobe {

inline constexpr char kStoreMagic[8] = {'L', 'P', 'R', 'O', 'B', 'E', '0', '1'};
inline constexpr char kIndexMagic[8] = {'L', 'P', 'I', 'N', 'D', 'E', 'X', '1'};
inline constexpr std::uint32_t kStoreVersion = 1;

class ActivationSet {
 public:
  ActivationSet() = default;
  ActivationSet(std::string sentence_id, std::size_t num_layers, std::size_t num_tokens,
                std::size_t dim);
  ActivationSet(std::string sentence_id, std::size_t num_layers, std::size_t num_tokens,
                std::size_t dim, std::vector<float> data);

  const std::string& sentence_id() const { return sentence_id_; }
  /// L + 1.
  std::size_t num_layers() const { return num_layers_; }
  std::size_t num_tokens() const { return num_tokens_; }
  std::size_t dim() const { return dim_; }

  std::span<const float> token(std::size_t layer, std::size_t tok) const {
    return {data_.data() + offset(layer, tok), dim_};
  }
  std::span<float> token(std::size_t layer, std::size_t tok) {
    return {data_.data() + offset(layer, tok), dim_};
  }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  /// Throws Error(NonFinite) naming the first bad layer/token/component.
  void check_finite() const;

  bool operator==(const ActivationSet&) const = default;

 private:
  std::size_t offset(std::size_t layer, std::size_t tok) const {
    return (layer * num_tokens_ + tok) * dim_;
  }

  std::string sentence_id_;
  std::size_t num_layers_ = 0;
  std::size_t num_tokens_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

struct IndexEntry {
  std::string sentence_id;
  std::uint64_t offset = 0;
  std::uint32_t num_tokens = 0;
};

struct StoreManifest {
  std::filesystem::path path;
  std::string encoder_name;
  std::uint32_t num_encoder_layers = 0;  // L
  std::uint32_t dim = 0;
  std::uint64_t index_offset = 0;
  std::vector<IndexEntry> entries;  // file order
  std::unordered_map<std::string, std::size_t> by_id;

  std::size_t num_layers() const { return num_encoder_layers + 1u; }
  bool contains(const std::string& id) const { return by_id.count(id) != 0; }
};

/// Reads header, footer and index only; no tensor data.
StoreManifest open_store(const std::filesystem::path& path);

/// Opens its own stream, so concurrent calls on a shared manifest are safe.
ActivationSet read_activations(const StoreManifest& manifest, const std::string& sentence_id);

struct ValidationReport {
  struct Row {
    std::string sentence_id;
    std::size_t num_tokens;
  };
  std::vector<Row> rows;
};

/// Full check: opens the store, reads every record and verifies every
/// invariant. Throws on the first failure.
ValidationReport validate_store(const std::filesystem::path& path);

/// Single writer. Records go to a temp sibling which is renamed into place by
/// finish(); a writer destroyed without finish() removes its temp file.
class StoreWriter {
 public:
  StoreWriter(const std::filesystem::path& path, std::string encoder_name,
              std::uint32_t num_encoder_layers, std::uint32_t dim);
  ~StoreWriter();
  StoreWriter(const StoreWriter&) = delete;
  StoreWriter& operator=(const StoreWriter&) = delete;

  void add(const ActivationSet& acts);
  void finish();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  std::uint32_t num_encoder_layers_;
  std::uint32_t dim_;
  std::vector<IndexEntry> entries_;
  std::unordered_map<std::string, std::size_t> ids_;
  bool finished_ = false;
};

/// In-memory cache of a store's sentences, loaded once for training.
class ActivationCache {
 public:
  ActivationCache() = default;
  explicit ActivationCache(StoreManifest manifest) : manifest_(std::move(manifest)) {}

  const StoreManifest& manifest() const { return manifest_; }
  /// Loads `ids` not yet cached. Throws UnknownSentence for ids absent from the store.
  void load(std::span<const std::string> ids);
  void insert(ActivationSet acts);
  const ActivationSet& at(const std::string& id) const;
  bool contains(const std::string& id) const { return sets_.count(id) != 0; }

 private:
  StoreManifest manifest_;
  std::map<std::string, ActivationSet> sets_;
};

}  // namespace lprobe
