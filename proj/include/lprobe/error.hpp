#pragma once

#include <stdexcept>
#include <string>

namespace lprobe {

enum class ErrorKind {
  Parse,
  SpanOutOfRange,
  UnknownLabel,
  ArityMismatch,
  InvalidArgument,
  EmptyInput,
  BadMagic,
  VersionMismatch,
  CorruptIndex,
  Truncated,
  UnknownSentence,
  NonFinite,
  ShapeMismatch,
  DuplicateId,
  MissingInput,
  UndefinedResult,
  Io,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace lprobe
