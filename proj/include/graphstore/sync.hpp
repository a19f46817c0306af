#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "graphstore/head_log.hpp"

namespace graphstore::sync {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxPayload = 16u << 20;
inline constexpr std::size_t kBatchSize = 256;

enum class FrameType : std::uint8_t {
  hello = 0x01,
  ref_req = 0x02,
  ref_advert = 0x03,
  want_check = 0x04,
  missing = 0x05,
  object = 0x06,
  head_update = 0x07,
  ok = 0x08,
  error = 0x7F,
};

struct Frame {
  FrameType type;
  std::string payload;
};

// Codes carried in ERROR frames.
enum class WireError : std::uint16_t {
  version_mismatch = 1,
  protocol = 2,
  not_found = 3,
  stale_remote = 4,
  not_fast_forward = 5,
  object_rejected = 6,
  dangling_commit = 7,
  internal = 8,
  lock_timeout = 9,
};

/// Frame bytes: u32 BE payload length, type byte, payload.
std::string encode_frame(const Frame& frame);

struct Hello { std::uint16_t proto = kProtocolVersion; };
struct RefReq { std::string graph; };
struct RefAdvert {
  std::string graph;
  std::uint64_t seq = 0;
  std::optional<ObjectId> commit;
};
struct WantCheck { std::vector<ObjectId> ids; };
struct Missing { std::vector<bool> bits; };
struct ObjectMsg {
  ObjectKind kind;
  std::string content;
};
struct HeadUpdate {
  std::string graph;
  std::optional<ObjectId> expected;
  std::vector<HeadRecord> records;
};
struct ErrorMsg {
  WireError code;
  std::string message;
};

Frame encode(const Hello& m);
Frame encode(const RefReq& m);
Frame encode(const RefAdvert& m);
Frame encode(const WantCheck& m);
Frame encode(const Missing& m);
Frame encode(const ObjectMsg& m);
Frame encode(const HeadUpdate& m);
Frame encode_ok();
Frame encode(const ErrorMsg& m);

// Payload decoders; throw SessionError on malformed payloads.
Hello decode_hello(std::string_view p);
RefReq decode_ref_req(std::string_view p);
RefAdvert decode_ref_advert(std::string_view p);
WantCheck decode_want_check(std::string_view p);
Missing decode_missing(std::string_view p, std::size_t offered);
ObjectMsg decode_object(std::string_view p);
HeadUpdate decode_head_update(std::string_view p);
ErrorMsg decode_error(std::string_view p);

/// Reliable byte stream.
class Transport {
 public:
  virtual ~Transport() = default;
  /// Reads up to n bytes; returns 0 at end of stream.
  virtual std::size_t read_some(char* buf, std::size_t n) = 0;
  virtual void write_all(std::string_view data) = 0;
  virtual void close() = 0;
};

class FdTransport final : public Transport {
 public:
  explicit FdTransport(int fd) : fd_(fd) {}
  ~FdTransport() override { close(); }
  std::size_t read_some(char* buf, std::size_t n) override;
  void write_all(std::string_view data) override;
  void close() override;
  int fd() const noexcept { return fd_; }

 private:
  int fd_;
};

/// Frame-level view over a transport.
class Connection {
 public:
  explicit Connection(Transport& t) : transport_(t) {}

  void send(const Frame& f);
  /// nullopt on clean end of stream before any frame byte.
  std::optional<Frame> receive();
  /// Like receive but throws SessionError at end of stream, and converts ERROR
  /// frames into the matching library error.
  Frame expect();

  std::uint64_t frames_sent() const noexcept { return frames_sent_; }

 private:
  bool read_exact(char* buf, std::size_t n, bool eof_ok);
  Transport& transport_;
  std::uint64_t frames_sent_ = 0;
};

struct PushReport {
  std::uint64_t objects_sent = 0;
  std::uint64_t records_appended = 0;
};

/// Sends the graph's new history and missing objects to the peer.
PushReport push(Store& store, Transport& peer, std::string_view graph, bool force);
/// Fetches the peer's history of the graph into the local store.
PushReport pull(Store& store, Transport& peer, std::string_view graph);

/// Asks the peer which of `ids` it lacks (one WANT_CHECK per 256 ids).
std::vector<ObjectId> negotiate_missing(Connection& conn, const std::vector<ObjectId>& ids);

struct SessionStats {
  std::uint64_t objects_accepted = 0;
  std::uint64_t records_appended = 0;
};

/// Serves one connection until the peer closes it. Never throws; failures are
/// reported to the peer as ERROR frames and end the session.
SessionStats serve_session(const fs::path& store_root, Transport& peer);

/// `host:port` for TCP, anything containing '/' for a unix socket path.
std::unique_ptr<FdTransport> connect(const std::string& address);

/// Accepts sessions on `address` until `stop` becomes true.
void serve(const fs::path& store_root, const std::string& address, const std::atomic<bool>& stop,
           const std::function<void(const std::string&)>& on_listening = {});

}  // namespace graphstore::sync
