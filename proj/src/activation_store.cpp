#include "lprobe/activation_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include "lprobe/error.hpp"
#include "lprobe/fs_util.hpp"

namespace lprobe {

namespace {

// Upper bounds that keep a corrupt length field from triggering huge allocations.
constexpr std::uint32_t kMaxIdLength = 1u << 16;
constexpr std::uint32_t kMaxNameLength = 1u << 16;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Reader over an ifstream with known file size: every short read is reported
// as truncation with caller-supplied context.
class Reader {
 public:
  Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::MissingInput, "cannot open store " + path.string());
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0);
  }

  std::uint64_t size() const { return size_; }
  std::uint64_t tell() { return static_cast<std::uint64_t>(in_.tellg()); }
  void seek(std::uint64_t pos) {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(pos));
  }

  void bytes(char* dst, std::size_t n, const std::string& what) {
    if (n == 0) return;
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error(ErrorKind::Truncated, path_.string() + ": truncated while reading " + what);
    }
  }

  template <typename T>
  T get(const std::string& what) {
    T v;
    bytes(reinterpret_cast<char*>(&v), sizeof(T), what);
    return to_little(v);
  }

  std::string string(std::uint32_t max_len, const std::string& what) {
    const auto len = get<std::uint32_t>(what);
    if (len > max_len) {
      throw Error(ErrorKind::CorruptIndex,
                  path_.string() + ": implausible string length while reading " + what);
    }
    std::string s(len, '\0');
    bytes(s.data(), len, what);
    return s;
  }

  void floats(std::span<float> dst, const std::string& what) {
    bytes(reinterpret_cast<char*>(dst.data()), dst.size_bytes(), what);
    if constexpr (std::endian::native == std::endian::big) {
      for (float& f : dst) f = to_little(f);
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
};

struct Header {
  std::uint32_t version;
  std::uint32_t num_encoder_layers;
  std::uint32_t dim;
  std::string encoder_name;
  std::uint64_t end;
};

Header read_header(Reader& r, const std::filesystem::path& path) {
  char magic[8];
  if (r.size() < sizeof magic) {
    throw Error(ErrorKind::BadMagic, path.string() + ": file too short for magic");
  }
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kStoreMagic, sizeof magic) != 0) {
    throw Error(ErrorKind::BadMagic, path.string() + ": bad magic (expected LPROBE01)");
  }
  Header h;
  h.version = r.get<std::uint32_t>("header version");
  if (h.version != kStoreVersion) {
    throw Error(ErrorKind::VersionMismatch, path.string() + ": unsupported store version " +
                                                std::to_string(h.version));
  }
  h.num_encoder_layers = r.get<std::uint32_t>("header L");
  h.dim = r.get<std::uint32_t>("header d");
  h.encoder_name = r.string(kMaxNameLength, "header encoder name");
  h.end = r.tell();
  return h;
}

std::uint64_t record_payload_bytes(std::uint64_t layers, std::uint64_t n, std::uint64_t d) {
  return layers * n * d * sizeof(float);
}

// Walks records from the header forward until the data runs out; used to name
// the sentence whose record is incomplete when the footer is missing.
[[noreturn]] void diagnose_truncation(Reader& r, const std::filesystem::path& path,
                                      const Header& h) {
  r.seek(h.end);
  std::uint64_t pos = h.end;
  const std::uint64_t layers = h.num_encoder_layers + 1ull;
  std::string last_complete = "<none>";
  while (pos < r.size()) {
    std::string id;
    try {
      id = r.string(kMaxIdLength, "record id");
    } catch (const Error&) {
      break;
    }
    std::uint32_t n = 0;
    try {
      n = r.get<std::uint32_t>("record n");
    } catch (const Error&) {
      throw Error(ErrorKind::Truncated,
                  path.string() + ": truncated in record for sentence \"" + id + "\"");
    }
    const std::uint64_t end = r.tell() + record_payload_bytes(layers, n, h.dim);
    if (end > r.size()) {
      throw Error(ErrorKind::Truncated,
                  path.string() + ": truncated in record for sentence \"" + id + "\"");
    }
    last_complete = id;
    pos = end;
    r.seek(pos);
  }
  throw Error(ErrorKind::Truncated, path.string() +
                                        ": truncated (index/footer missing) after sentence \"" +
                                        last_complete + "\"");
}

}  // namespace

ActivationSet::ActivationSet(std::string sentence_id, std::size_t num_layers,
                             std::size_t num_tokens, std::size_t dim)
    : sentence_id_(std::move(sentence_id)),
      num_layers_(num_layers),
      num_tokens_(num_tokens),
      dim_(dim),
      data_(num_layers * num_tokens * dim, 0.0f) {}

ActivationSet::ActivationSet(std::string sentence_id, std::size_t num_layers,
                             std::size_t num_tokens, std::size_t dim, std::vector<float> data)
    : sentence_id_(std::move(sentence_id)),
      num_layers_(num_layers),
      num_tokens_(num_tokens),
      dim_(dim),
      data_(std::move(data)) {
  if (data_.size() != num_layers * num_tokens * dim) {
    throw Error(ErrorKind::ShapeMismatch, "activation data size does not match shape for " +
                                              sentence_id_);
  }
}

void ActivationSet::check_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      const std::size_t per_layer = num_tokens_ * dim_;
      throw Error(ErrorKind::NonFinite,
                  "sentence \"" + sentence_id_ + "\": non-finite activation at layer " +
                      std::to_string(i / per_layer) + ", token " +
                      std::to_string((i % per_layer) / dim_) + ", component " +
                      std::to_string(i % dim_));
    }
  }
}

StoreManifest open_store(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r, path);

  constexpr std::uint64_t footer_size = 16;
  char magic[8] = {};
  std::uint64_t index_offset = 0;
  if (r.size() >= h.end + footer_size) {
    r.seek(r.size() - footer_size);
    index_offset = r.get<std::uint64_t>("footer");
    r.bytes(magic, sizeof magic, "footer magic");
  }
  if (std::memcmp(magic, kIndexMagic, sizeof magic) != 0) diagnose_truncation(r, path, h);
  if (index_offset < h.end || index_offset + 8 > r.size() - footer_size) {
    throw Error(ErrorKind::CorruptIndex, path.string() + ": index offset out of range");
  }

  StoreManifest m;
  m.path = path;
  m.encoder_name = h.encoder_name;
  m.num_encoder_layers = h.num_encoder_layers;
  m.dim = h.dim;
  m.index_offset = index_offset;

  r.seek(index_offset);
  const auto count = r.get<std::uint64_t>("index count");
  const std::uint64_t layers = m.num_layers();
  std::uint64_t expected_offset = h.end;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (r.tell() >= r.size() - footer_size) {
      throw Error(ErrorKind::CorruptIndex, path.string() + ": index runs into footer");
    }
    IndexEntry e;
    e.sentence_id = r.string(kMaxIdLength, "index entry");
    e.offset = r.get<std::uint64_t>("index entry offset");
    e.num_tokens = r.get<std::uint32_t>("index entry n");
    if (e.offset != expected_offset) {
      throw Error(ErrorKind::CorruptIndex, path.string() + ": index offset for sentence \"" +
                                               e.sentence_id + "\" is inconsistent");
    }
    expected_offset = e.offset + 4 + e.sentence_id.size() + 4 +
                      record_payload_bytes(layers, e.num_tokens, m.dim);
    if (expected_offset > index_offset) {
      throw Error(ErrorKind::ShapeMismatch, path.string() + ": record for sentence \"" +
                                                e.sentence_id + "\" overruns the data region");
    }
    if (!m.by_id.emplace(e.sentence_id, m.entries.size()).second) {
      throw Error(ErrorKind::DuplicateId,
                  path.string() + ": duplicate sentence id \"" + e.sentence_id + "\"");
    }
    m.entries.push_back(std::move(e));
  }
  if (expected_offset != index_offset) {
    throw Error(ErrorKind::ShapeMismatch,
                path.string() + ": records do not tile the data region exactly");
  }
  if (r.tell() != r.size() - footer_size) {
    throw Error(ErrorKind::CorruptIndex, path.string() + ": trailing bytes after index");
  }
  return m;
}

ActivationSet read_activations(const StoreManifest& m, const std::string& sentence_id) {
  auto it = m.by_id.find(sentence_id);
  if (it == m.by_id.end()) {
    throw Error(ErrorKind::UnknownSentence,
                m.path.string() + ": unknown sentence \"" + sentence_id + "\"");
  }
  const IndexEntry& e = m.entries[it->second];
  Reader r(m.path);
  r.seek(e.offset);
  const std::string what = "record for sentence \"" + sentence_id + "\"";
  const std::string id = r.string(kMaxIdLength, what);
  const auto n = r.get<std::uint32_t>(what);
  if (id != sentence_id) {
    throw Error(ErrorKind::CorruptIndex, m.path.string() + ": index points at \"" + id +
                                             "\" for sentence \"" + sentence_id + "\"");
  }
  if (n != e.num_tokens) {
    throw Error(ErrorKind::ShapeMismatch, m.path.string() + ": " + what + " has n=" +
                                              std::to_string(n) + " but index says " +
                                              std::to_string(e.num_tokens));
  }
  ActivationSet acts(sentence_id, m.num_layers(), n, m.dim);
  r.floats(acts.data(), what);
  acts.check_finite();
  return acts;
}

ValidationReport validate_store(const std::filesystem::path& path) {
  const StoreManifest m = open_store(path);
  ValidationReport report;
  for (const auto& e : m.entries) {
    const ActivationSet acts = read_activations(m, e.sentence_id);
    report.rows.push_back({e.sentence_id, acts.num_tokens()});
  }
  return report;
}

StoreWriter::StoreWriter(const std::filesystem::path& path, std::string encoder_name,
                         std::uint32_t num_encoder_layers, std::uint32_t dim)
    : path_(path), tmp_(temp_sibling(path)), num_encoder_layers_(num_encoder_layers), dim_(dim) {
  if (dim == 0) throw Error(ErrorKind::InvalidArgument, "store dim must be positive");
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(ErrorKind::Io, "cannot open " + tmp_.string() + " for writing");
  out_.write(kStoreMagic, sizeof kStoreMagic);
  put<std::uint32_t>(out_, kStoreVersion);
  put<std::uint32_t>(out_, num_encoder_layers);
  put<std::uint32_t>(out_, dim);
  put_string(out_, encoder_name);
}

StoreWriter::~StoreWriter() {
  if (!finished_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

void StoreWriter::add(const ActivationSet& acts) {
  if (finished_) throw Error(ErrorKind::InvalidArgument, "store writer already finished");
  if (acts.num_layers() != num_encoder_layers_ + 1u || acts.dim() != dim_) {
    throw Error(ErrorKind::ShapeMismatch,
                "sentence \"" + acts.sentence_id() + "\" has shape (" +
                    std::to_string(acts.num_layers()) + ", n, " + std::to_string(acts.dim()) +
                    "), store expects (" + std::to_string(num_encoder_layers_ + 1u) + ", n, " +
                    std::to_string(dim_) + ")");
  }
  if (acts.sentence_id().size() > kMaxIdLength) {
    throw Error(ErrorKind::InvalidArgument, "sentence id too long");
  }
  acts.check_finite();
  if (!ids_.emplace(acts.sentence_id(), entries_.size()).second) {
    throw Error(ErrorKind::DuplicateId, "duplicate sentence id \"" + acts.sentence_id() + "\"");
  }
  IndexEntry e{acts.sentence_id(), static_cast<std::uint64_t>(out_.tellp()),
               static_cast<std::uint32_t>(acts.num_tokens())};
  put_string(out_, acts.sentence_id());
  put<std::uint32_t>(out_, e.num_tokens);
  if constexpr (std::endian::native == std::endian::little) {
    out_.write(reinterpret_cast<const char*>(acts.data().data()),
               static_cast<std::streamsize>(acts.data().size_bytes()));
  } else {
    for (float f : acts.data()) put<float>(out_, f);
  }
  entries_.push_back(std::move(e));
}

void StoreWriter::finish() {
  if (finished_) return;
  const auto index_offset = static_cast<std::uint64_t>(out_.tellp());
  put<std::uint64_t>(out_, entries_.size());
  for (const auto& e : entries_) {
    put_string(out_, e.sentence_id);
    put<std::uint64_t>(out_, e.offset);
    put<std::uint32_t>(out_, e.num_tokens);
  }
  put<std::uint64_t>(out_, index_offset);
  out_.write(kIndexMagic, sizeof kIndexMagic);
  out_.flush();
  if (!out_) throw Error(ErrorKind::Io, "write failed: " + tmp_.string());
  out_.close();
  std::filesystem::rename(tmp_, path_);
  finished_ = true;
}

void ActivationCache::load(std::span<const std::string> ids) {
  for (const auto& id : ids) {
    if (sets_.count(id)) continue;
    sets_.emplace(id, read_activations(manifest_, id));
  }
}

void ActivationCache::insert(ActivationSet acts) {
  auto id = acts.sentence_id();
  sets_.insert_or_assign(std::move(id), std::move(acts));
}

const ActivationSet& ActivationCache::at(const std::string& id) const {
  auto it = sets_.find(id);
  if (it == sets_.end()) {
    throw Error(ErrorKind::UnknownSentence, "activations for sentence \"" + id + "\" not loaded");
  }
  return it->second;
}

}  // namespace lprobe
