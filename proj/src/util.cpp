#include <fstream>
#include <sstream>

#include "lprobe/error.hpp"
#include "lprobe/fs_util.hpp"

namespace lprobe {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::SpanOutOfRange: return "span out of range";
    case ErrorKind::UnknownLabel: return "unknown label";
    case ErrorKind::ArityMismatch: return "arity mismatch";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::VersionMismatch: return "version mismatch";
    case ErrorKind::CorruptIndex: return "corrupt index";
    case ErrorKind::Truncated: return "truncated file";
    case ErrorKind::UnknownSentence: return "unknown sentence";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::DuplicateId: return "duplicate id";
    case ErrorKind::MissingInput: return "missing input";
    case ErrorKind::UndefinedResult: return "undefined result";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  return tmp;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error(ErrorKind::Io, "write failed: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingInput, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace lprobe
