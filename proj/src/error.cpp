#include "graphstore/error.hpp"

#include <cstring>

namespace graphstore {

std::string_view code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InitConflict: return "InitConflict";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::CorruptObject: return "CorruptObject";
    case ErrorCode::CorruptHead: return "CorruptHead";
    case ErrorCode::EncodeError: return "EncodeError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::GraphExists: return "GraphExists";
    case ErrorCode::InvalidName: return "InvalidName";
    case ErrorCode::StaleHead: return "StaleHead";
    case ErrorCode::LockRequired: return "LockRequired";
    case ErrorCode::LockTimeout: return "LockTimeout";
    case ErrorCode::DanglingCommit: return "DanglingCommit";
    case ErrorCode::BadSeq: return "BadSeq";
    case ErrorCode::NotRegistered: return "NotRegistered";
    case ErrorCode::IndexMissing: return "IndexMissing";
    case ErrorCode::SessionError: return "SessionError";
    case ErrorCode::StaleRemote: return "StaleRemote";
    case ErrorCode::NotFastForward: return "NotFastForward";
    case ErrorCode::ObjectRejected: return "ObjectRejected";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

void throw_io(const std::string& what, int err) {
  throw Error(ErrorCode::IoError, what + ": " + std::strerror(err));
}

}  // namespace graphstore
