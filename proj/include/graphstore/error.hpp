#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace graphstore {

// Every failure the library surfaces carries one of these codes. The CLI maps
// each code to exactly one exit status and prints code_name() as the first
// token of its diagnostic.
enum class ErrorCode {
  InitConflict,
  IoError,
  NotFound,
  CorruptObject,
  CorruptHead,
  EncodeError,
  ParseError,
  GraphExists,
  InvalidName,
  StaleHead,
  LockRequired,
  LockTimeout,
  DanglingCommit,
  BadSeq,
  NotRegistered,
  IndexMissing,
  SessionError,
  StaleRemote,
  NotFastForward,
  ObjectRejected,
  InvalidArgument,
};

std::string_view code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// ParseError with the byte offset at which decoding stopped.
class ParseFailure : public Error {
 public:
  ParseFailure(std::size_t offset, const std::string& reason)
      : Error(ErrorCode::ParseError, reason + " at offset " + std::to_string(offset)),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

[[noreturn]] void throw_io(const std::string& what, int err);

}  // namespace graphstore
