#include "lprobe/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "lprobe/error.hpp"
#include "lprobe/fs_util.hpp"

namespace lprobe {

namespace {

constexpr char kMagic[8] = {'L', 'P', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
 public:
  explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw Error(ErrorKind::Truncated, "checkpoint truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ProbeParams& params, const TaskSpec& task) {
  const ProbeShape& sh = params.shape;
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, task.fingerprint());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh.slots));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh.num_layers));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.mixing.layer_cap));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh.dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh.proj_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh.hidden_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh.num_labels));
  params.for_each_tensor([&](std::string_view, std::span<const double> t) {
    for (double v : t) put<float>(out, static_cast<float>(v));
  });
  return out;
}

ProbeParams parse_checkpoint(const std::string& bytes, const TaskSpec& task) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorKind::BadMagic, "not a probe checkpoint");
  }
  Cursor cur(bytes);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) cur.get<char>();
  if (cur.get<std::uint32_t>() != kCheckpointVersion) {
    throw Error(ErrorKind::VersionMismatch, "unsupported checkpoint version");
  }
  if (cur.get<std::uint64_t>() != task.fingerprint()) {
    throw Error(ErrorKind::InvalidArgument, "checkpoint was trained for a different task spec");
  }
  ProbeShape sh;
  sh.slots = static_cast<int>(cur.get<std::uint32_t>());
  sh.num_layers = cur.get<std::uint32_t>();
  const std::size_t cap = cur.get<std::uint32_t>();
  sh.dim = cur.get<std::uint32_t>();
  sh.proj_dim = cur.get<std::uint32_t>();
  sh.hidden_dim = cur.get<std::uint32_t>();
  sh.num_labels = cur.get<std::uint32_t>();
  if (sh.num_labels != task.num_labels() || sh.slots != span_slots(task.arity)) {
    throw Error(ErrorKind::ShapeMismatch, "checkpoint shape does not match task");
  }
  ProbeParams params = ProbeParams::zeros(sh, cap);
  if (cur.remaining() != params.num_parameters() * sizeof(float)) {
    throw Error(cur.remaining() < params.num_parameters() * sizeof(float) ? ErrorKind::Truncated
                                                                          : ErrorKind::ShapeMismatch,
                "checkpoint payload size does not match its header");
  }
  params.for_each_tensor([&](std::string_view, std::span<double> t) {
    for (double& v : t) v = static_cast<double>(cur.get<float>());
  });
  if (!params.all_finite()) throw Error(ErrorKind::NonFinite, "checkpoint has non-finite values");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ProbeParams& params,
                     const TaskSpec& task) {
  write_file_atomic(path, serialize_checkpoint(params, task));
}

ProbeParams load_checkpoint(const std::filesystem::path& path, const TaskSpec& task) {
  try {
    return parse_checkpoint(read_file(path), task);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

ProbeParams round_to_f32(const ProbeParams& params) {
  ProbeParams out = params;
  out.for_each_tensor([](std::string_view, std::span<double> t) {
    for (double& v : t) v = static_cast<double>(static_cast<float>(v));
  });
  return out;
}

}  // namespace lprobe
