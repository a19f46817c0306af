#include "graphstore/sync.hpp"

#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <deque>
#include <thread>

#include "file_util.hpp"
#include "graphstore/graph_objects.hpp"
#include "graphstore/indexers.hpp"
#include "graphstore/transactions.hpp"

namespace graphstore::sync {

namespace {

constexpr std::size_t kMaxRecordsPerUpdate = 0xFFFF;

[[noreturn]] void session_error(const std::string& what) { throw Error(ErrorCode::SessionError, what); }

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void put_str(std::string& out, std::string_view s) {
  if (s.size() > 0xFFFF) session_error("string too long");
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out.append(s);
}

void put_id(std::string& out, const std::optional<ObjectId>& id) {
  if (id)
    out.append(id->raw());
  else
    out.append(ObjectId::kSize, '\0');
}

class Reader {
 public:
  explicit Reader(std::string_view p) : p_(p) {}

  std::string_view take(std::size_t n) {
    if (p_.size() < n) session_error("truncated payload");
    auto out = p_.substr(0, n);
    p_.remove_prefix(n);
    return out;
  }
  std::uint64_t uint(std::size_t bytes) {
    std::uint64_t v = 0;
    for (char c : take(bytes)) v = v << 8 | static_cast<std::uint8_t>(c);
    return v;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(uint(2)); }
  std::uint64_t u64() { return uint(8); }
  std::string str() { return std::string(take(u16())); }
  ObjectId id() { return ObjectId::from_raw(take(ObjectId::kSize)); }
  std::optional<ObjectId> opt_id() {
    auto v = id();
    if (v.is_zero()) return std::nullopt;
    return v;
  }
  std::string_view rest() {
    auto out = p_;
    p_ = {};
    return out;
  }
  void finish() const {
    if (!p_.empty()) session_error("trailing bytes in payload");
  }

 private:
  std::string_view p_;
};

ErrorCode to_code(WireError w) {
  switch (w) {
    case WireError::not_found: return ErrorCode::NotFound;
    case WireError::stale_remote: return ErrorCode::StaleRemote;
    case WireError::not_fast_forward: return ErrorCode::NotFastForward;
    case WireError::object_rejected: return ErrorCode::ObjectRejected;
    case WireError::dangling_commit: return ErrorCode::DanglingCommit;
    case WireError::lock_timeout: return ErrorCode::LockTimeout;
    case WireError::internal: return ErrorCode::IoError;
    case WireError::version_mismatch:
    case WireError::protocol: break;
  }
  return ErrorCode::SessionError;
}

WireError to_wire(ErrorCode c) {
  switch (c) {
    case ErrorCode::NotFound: return WireError::not_found;
    case ErrorCode::StaleRemote:
    case ErrorCode::StaleHead: return WireError::stale_remote;
    case ErrorCode::NotFastForward: return WireError::not_fast_forward;
    case ErrorCode::ObjectRejected: return WireError::object_rejected;
    case ErrorCode::DanglingCommit: return WireError::dangling_commit;
    case ErrorCode::LockTimeout: return WireError::lock_timeout;
    case ErrorCode::SessionError:
    case ErrorCode::ParseError:
    case ErrorCode::InvalidName: return WireError::protocol;
    default: return WireError::internal;
  }
}

Frame expect_type(Connection& conn, FrameType type) {
  auto f = conn.expect();
  if (f.type != type)
    session_error("unexpected frame type " + std::to_string(static_cast<int>(f.type)));
  return f;
}

}  // namespace

std::string encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxPayload) session_error("frame payload exceeds 16 MiB");
  std::string out;
  out.reserve(5 + frame.payload.size());
  put_u32(out, static_cast<std::uint32_t>(frame.payload.size()));
  out.push_back(static_cast<char>(frame.type));
  out.append(frame.payload);
  return out;
}

Frame encode(const Hello& m) {
  Frame f{FrameType::hello, {}};
  put_u16(f.payload, m.proto);
  return f;
}

Frame encode(const RefReq& m) {
  Frame f{FrameType::ref_req, {}};
  put_str(f.payload, m.graph);
  return f;
}

Frame encode(const RefAdvert& m) {
  Frame f{FrameType::ref_advert, {}};
  put_str(f.payload, m.graph);
  put_u64(f.payload, m.seq);
  put_id(f.payload, m.commit);
  return f;
}

Frame encode(const WantCheck& m) {
  if (m.ids.size() > kBatchSize) session_error("WANT_CHECK batch exceeds 256 ids");
  Frame f{FrameType::want_check, {}};
  put_u16(f.payload, static_cast<std::uint16_t>(m.ids.size()));
  for (const auto& id : m.ids) f.payload.append(id.raw());
  return f;
}

Frame encode(const Missing& m) {
  Frame f{FrameType::missing, std::string((m.bits.size() + 7) / 8, '\0')};
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    if (m.bits[i]) f.payload[i / 8] = static_cast<char>(f.payload[i / 8] | (0x80 >> (i % 8)));
  return f;
}

Frame encode(const ObjectMsg& m) {
  Frame f{FrameType::object, {}};
  f.payload.reserve(1 + m.content.size());
  f.payload.push_back(static_cast<char>(m.kind));
  f.payload.append(m.content);
  return f;
}

Frame encode(const HeadUpdate& m) {
  if (m.records.size() > kMaxRecordsPerUpdate) session_error("HEAD_UPDATE carries too many records");
  Frame f{FrameType::head_update, {}};
  put_str(f.payload, m.graph);
  put_id(f.payload, m.expected);
  put_u16(f.payload, static_cast<std::uint16_t>(m.records.size()));
  for (const auto& r : m.records) {
    put_u64(f.payload, r.seq);
    f.payload.append(r.commit.raw());
  }
  return f;
}

Frame encode_ok() { return Frame{FrameType::ok, {}}; }

Frame encode(const ErrorMsg& m) {
  Frame f{FrameType::error, {}};
  put_u16(f.payload, static_cast<std::uint16_t>(m.code));
  f.payload.append(m.message);
  return f;
}

Hello decode_hello(std::string_view p) {
  Reader r(p);
  Hello h{r.u16()};
  r.finish();
  return h;
}

RefReq decode_ref_req(std::string_view p) {
  Reader r(p);
  RefReq m{r.str()};
  r.finish();
  return m;
}

RefAdvert decode_ref_advert(std::string_view p) {
  Reader r(p);
  RefAdvert m;
  m.graph = r.str();
  m.seq = r.u64();
  m.commit = r.opt_id();
  r.finish();
  return m;
}

WantCheck decode_want_check(std::string_view p) {
  Reader r(p);
  auto n = r.u16();
  if (n > kBatchSize) session_error("WANT_CHECK batch exceeds 256 ids");
  WantCheck m;
  for (std::size_t i = 0; i < n; ++i) m.ids.push_back(r.id());
  r.finish();
  return m;
}

Missing decode_missing(std::string_view p, std::size_t offered) {
  if (p.size() != (offered + 7) / 8) session_error("MISSING bitmap has wrong length");
  Missing m;
  for (std::size_t i = 0; i < offered; ++i)
    m.bits.push_back((static_cast<std::uint8_t>(p[i / 8]) & (0x80 >> (i % 8))) != 0);
  for (std::size_t i = offered; i < p.size() * 8; ++i)
    if (static_cast<std::uint8_t>(p[i / 8]) & (0x80 >> (i % 8))) session_error("MISSING padding bits set");
  return m;
}

ObjectMsg decode_object(std::string_view p) {
  if (p.empty()) session_error("empty OBJECT payload");
  auto k = static_cast<std::uint8_t>(p[0]);
  if (k < 1 || k > 4) session_error("unknown object kind " + std::to_string(k));
  return ObjectMsg{static_cast<ObjectKind>(k), std::string(p.substr(1))};
}

HeadUpdate decode_head_update(std::string_view p) {
  Reader r(p);
  HeadUpdate m;
  m.graph = r.str();
  m.expected = r.opt_id();
  auto n = r.u16();
  for (std::size_t i = 0; i < n; ++i) {
    HeadRecord rec;
    rec.seq = r.u64();
    rec.commit = r.id();
    m.records.push_back(rec);
  }
  r.finish();
  return m;
}

ErrorMsg decode_error(std::string_view p) {
  Reader r(p);
  ErrorMsg m;
  m.code = static_cast<WireError>(r.u16());
  m.message = std::string(r.rest());
  return m;
}

std::size_t FdTransport::read_some(char* buf, std::size_t n) {
  for (;;) {
    ssize_t got = ::read(fd_, buf, n);
    if (got >= 0) return static_cast<std::size_t>(got);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    throw_io("socket read", errno);
  }
}

void FdTransport::write_all(std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) n = ::write(fd_, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::SessionError, std::string("connection lost: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void FdTransport::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

bool Connection::read_exact(char* buf, std::size_t n, bool eof_ok) {
  std::size_t got = 0;
  while (got < n) {
    auto r = transport_.read_some(buf + got, n - got);
    if (r == 0) {
      if (got == 0 && eof_ok) return false;
      session_error("connection closed mid-frame");
    }
    got += r;
  }
  return true;
}

void Connection::send(const Frame& f) {
  try {
    transport_.write_all(encode_frame(f));
  } catch (const Error& write_error) {
    // A peer that rejects us sends ERROR and hangs up, possibly while we are
    // still streaming. Its reason beats our broken pipe.
    std::optional<Error> reason;
    try {
      for (int i = 0; i < 1024 && !reason; ++i) {
        auto r = receive();
        if (!r) break;
        if (r->type == FrameType::error) {
          auto e = decode_error(r->payload);
          reason.emplace(to_code(e.code), "peer: " + e.message);
        }
      }
    } catch (const Error&) {
    }
    if (reason) throw *reason;
    throw;
  }
  ++frames_sent_;
}

std::optional<Frame> Connection::receive() {
  char header[5];
  if (!read_exact(header, sizeof header, true)) return std::nullopt;
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len = len << 8 | static_cast<std::uint8_t>(header[i]);
  if (len > kMaxPayload) session_error("frame length " + std::to_string(len) + " exceeds limit");
  Frame f{static_cast<FrameType>(static_cast<std::uint8_t>(header[4])), std::string(len, '\0')};
  if (len) read_exact(f.payload.data(), len, false);
  return f;
}

Frame Connection::expect() {
  auto f = receive();
  if (!f) session_error("connection closed by peer");
  if (f->type == FrameType::error) {
    auto e = decode_error(f->payload);
    throw Error(to_code(e.code), "peer: " + e.message);
  }
  return std::move(*f);
}

std::vector<ObjectId> negotiate_missing(Connection& conn, const std::vector<ObjectId>& ids) {
  std::vector<ObjectId> out;
  for (std::size_t at = 0; at < ids.size(); at += kBatchSize) {
    auto end = std::min(ids.size(), at + kBatchSize);
    WantCheck batch{{ids.begin() + static_cast<std::ptrdiff_t>(at), ids.begin() + static_cast<std::ptrdiff_t>(end)}};
    conn.send(encode(batch));
    auto bits = decode_missing(expect_type(conn, FrameType::missing).payload, batch.ids.size());
    for (std::size_t i = 0; i < batch.ids.size(); ++i)
      if (bits.bits[i]) out.push_back(batch.ids[i]);
  }
  return out;
}

namespace {

bool is_ancestor(const Store& store, const ObjectId& ancestor, const ObjectId& from) {
  IdSet seen;
  std::vector<ObjectId> stack{from};
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    if (id == ancestor) return true;
    if (!seen.insert(id).second || !store.contains(id)) continue;
    try {
      for (const auto& p : load_commit(store, id).parents) stack.push_back(p);
    } catch (const Error&) {
    }
  }
  return false;
}

// Records the receiver lacks, given the receiver's latest commit.
std::vector<HeadRecord> plan_send(const Store& store, std::string_view graph,
                                  const std::optional<ObjectId>& remote, bool force) {
  auto history = read_history(store, open_graph(store, graph));
  if (!remote) return history;
  for (auto i = history.size(); i-- > 0;)
    if (history[i].commit == *remote) return {history.begin() + static_cast<std::ptrdiff_t>(i) + 1, history.end()};
  if (force || (!history.empty() && is_ancestor(store, *remote, history.back().commit))) return history;
  throw Error(ErrorCode::NotFastForward,
              "remote head " + remote->hex() + " is not in the history of graph " + std::string(graph));
}

// Streams the closure the peer lacks, then the head records.
std::uint64_t run_sender(Connection& conn, const Store& store, std::string_view graph,
                         const std::optional<ObjectId>& remote, const std::vector<HeadRecord>& records) {
  std::vector<ObjectId> commits;
  for (const auto& r : records) commits.push_back(r.commit);
  auto c = closure(store, commits, ClosureOptions{.follow_parents = false});
  if (!c.missing.empty() || !c.corrupt.empty())
    throw Error(ErrorCode::DanglingCommit, "local history of " + std::string(graph) + " is incomplete");

  std::uint64_t sent = 0;
  const auto& ids = c.post_order;
  for (std::size_t at = 0; at < ids.size(); at += kBatchSize) {
    auto end = std::min(ids.size(), at + kBatchSize);
    std::vector<ObjectId> batch(ids.begin() + static_cast<std::ptrdiff_t>(at),
                                ids.begin() + static_cast<std::ptrdiff_t>(end));
    for (const auto& id : negotiate_missing(conn, batch)) {
      auto obj = store.get(id);
      conn.send(encode(ObjectMsg{obj.kind, std::move(obj.content)}));
      ++sent;
    }
  }

  // A HEAD_UPDATE shorter than the per-frame maximum ends the transfer.
  std::optional<ObjectId> expected = remote;
  std::size_t at = 0;
  do {
    auto end = std::min(records.size(), at + kMaxRecordsPerUpdate);
    HeadUpdate upd{std::string(graph), expected,
                   {records.begin() + static_cast<std::ptrdiff_t>(at), records.begin() + static_cast<std::ptrdiff_t>(end)}};
    conn.send(encode(upd));
    expect_type(conn, FrameType::ok);
    if (end > at) expected = records[end - 1].commit;
    bool final_chunk = end - at < kMaxRecordsPerUpdate;
    at = end;
    if (final_chunk) break;
  } while (true);
  return sent;
}

std::size_t apply_head_update(Store& store, const HeadUpdate& upd) {
  if (!graph_exists(store, upd.graph)) {
    try {
      create_graph(store, upd.graph);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::GraphExists) throw;
    }
  }
  if (upd.records.empty()) return 0;
  std::vector<ObjectId> commits;
  for (const auto& r : upd.records) commits.push_back(r.commit);
  auto c = closure(store, commits, ClosureOptions{.follow_parents = false});
  if (!c.missing.empty())
    throw Error(ErrorCode::DanglingCommit, "pushed history references missing " + c.missing.begin()->hex());

  auto g = graph_ref(store, upd.graph);
  HeadRecord last;
  with_lock(store, g.name, [&] {
    auto st = head_state(store, g);
    if (st.commit != upd.expected)
      throw Error(ErrorCode::StaleRemote, "graph " + g.name + " moved during transfer");
    auto seq = st.latest;
    for (const auto& r : upd.records) last = append_record(store, g, seq++, r.commit);
  });
  notify_commit(store, g.name, last);
  return upd.records.size();
}

// Receiver half of a transfer for `graph`; returns after the final HEAD_UPDATE.
void run_receiver(Connection& conn, Store& store, std::string_view graph, SessionStats& stats) {
  std::deque<ObjectId> expected_objects;
  for (;;) {
    auto f = conn.expect();
    switch (f.type) {
      case FrameType::want_check: {
        if (!expected_objects.empty()) session_error("WANT_CHECK before requested objects arrived");
        auto want = decode_want_check(f.payload);
        Missing reply;
        for (const auto& id : want.ids) {
          bool lacking = !store.contains(id);
          reply.bits.push_back(lacking);
          if (lacking) expected_objects.push_back(id);
        }
        conn.send(encode(reply));
        break;
      }
      case FrameType::object: {
        if (expected_objects.empty()) session_error("unrequested OBJECT");
        auto obj = decode_object(f.payload);
        auto want = expected_objects.front();
        expected_objects.pop_front();
        if (compute_id(obj.kind, obj.content) != want)
          throw Error(ErrorCode::ObjectRejected, "object does not hash to " + want.hex());
        store.put(obj.kind, obj.content);
        ++stats.objects_accepted;
        break;
      }
      case FrameType::head_update: {
        if (!expected_objects.empty()) session_error("HEAD_UPDATE before requested objects arrived");
        auto upd = decode_head_update(f.payload);
        if (upd.graph != graph) session_error("HEAD_UPDATE for unexpected graph");
        stats.records_appended += apply_head_update(store, upd);
        conn.send(encode_ok());
        if (upd.records.size() < kMaxRecordsPerUpdate) return;
        break;
      }
      default:
        session_error("unexpected frame type " + std::to_string(static_cast<int>(f.type)));
    }
  }
}

void handshake(Connection& conn) {
  conn.send(encode(Hello{}));
  auto h = decode_hello(expect_type(conn, FrameType::hello).payload);
  if (h.proto != kProtocolVersion) session_error("peer speaks protocol " + std::to_string(h.proto));
}

}  // namespace

PushReport push(Store& store, Transport& peer, std::string_view graph, bool force) {
  open_graph(store, graph);
  Connection conn(peer);
  handshake(conn);
  conn.send(encode(RefReq{std::string(graph)}));
  auto adv = decode_ref_advert(expect_type(conn, FrameType::ref_advert).payload);
  auto records = plan_send(store, graph, adv.commit, force);
  PushReport report;
  report.objects_sent = run_sender(conn, store, graph, adv.commit, records);
  report.records_appended = records.size();
  return report;
}

PushReport pull(Store& store, Transport& peer, std::string_view graph) {
  graph_ref(store, graph);  // validates the name
  Connection conn(peer);
  handshake(conn);
  RefAdvert mine{std::string(graph), 0, std::nullopt};
  if (graph_exists(store, graph)) {
    auto snap = snapshot(store, graph);
    mine.seq = snap.seq;
    mine.commit = snap.commit;
  }
  conn.send(encode(mine));
  SessionStats stats;
  run_receiver(conn, store, graph, stats);
  return PushReport{stats.objects_accepted, stats.records_appended};
}

SessionStats serve_session(const fs::path& store_root, Transport& peer) {
  SessionStats stats;
  Connection conn(peer);
  auto reply_error = [&](WireError code, const std::string& msg) {
    try {
      conn.send(encode(ErrorMsg{code, msg}));
    } catch (...) {
    }
  };
  try {
    auto store = Store::open(store_root);
    auto first = conn.receive();
    if (!first) return stats;
    if (first->type != FrameType::hello) session_error("session must start with HELLO");
    auto hello = decode_hello(first->payload);
    if (hello.proto != kProtocolVersion) {
      reply_error(WireError::version_mismatch,
                  "protocol " + std::to_string(hello.proto) + " unsupported; server speaks " +
                      std::to_string(kProtocolVersion));
      return stats;
    }
    conn.send(encode(Hello{}));
    while (auto f = conn.receive()) {
      if (f->type == FrameType::ref_req) {
        auto req = decode_ref_req(f->payload);
        RefAdvert adv{req.graph, 0, std::nullopt};
        if (graph_exists(store, req.graph)) {
          auto snap = snapshot(store, req.graph);
          adv.seq = snap.seq;
          adv.commit = snap.commit;
        } else {
          graph_ref(store, req.graph);
        }
        conn.send(encode(adv));
        run_receiver(conn, store, req.graph, stats);
      } else if (f->type == FrameType::ref_advert) {
        auto adv = decode_ref_advert(f->payload);
        if (!graph_exists(store, adv.graph)) throw Error(ErrorCode::NotFound, "graph " + adv.graph);
        auto records = plan_send(store, adv.graph, adv.commit, false);
        run_sender(conn, store, adv.graph, adv.commit, records);
      } else {
        session_error("unexpected frame type " + std::to_string(static_cast<int>(f->type)));
      }
    }
  } catch (const Error& e) {
    reply_error(to_wire(e.code()), e.what());
  } catch (const std::exception& e) {
    reply_error(WireError::internal, e.what());
  }
  return stats;
}

namespace {

struct Endpoint {
  bool unix_socket = false;
  std::string path;  // unix
  std::string host;
  std::string port;
};

Endpoint parse_address(const std::string& address) {
  Endpoint ep;
  if (address.find('/') != std::string::npos) {
    ep.unix_socket = true;
    ep.path = address.starts_with("unix:") ? address.substr(5) : address;
    return ep;
  }
  auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "address must be host:port or a socket path");
  ep.host = address.substr(0, colon);
  ep.port = address.substr(colon + 1);
  if (ep.host.starts_with('[') && ep.host.ends_with(']')) ep.host = ep.host.substr(1, ep.host.size() - 2);
  return ep;
}

sockaddr_un unix_addr(const std::string& path) {
  sockaddr_un sa{};
  sa.sun_family = AF_UNIX;
  if (path.size() >= sizeof sa.sun_path) throw Error(ErrorCode::InvalidArgument, "socket path too long");
  std::memcpy(sa.sun_path, path.c_str(), path.size() + 1);
  return sa;
}

}  // namespace

std::unique_ptr<FdTransport> connect(const std::string& address) {
  auto ep = parse_address(address);
  if (ep.unix_socket) {
    detail::UniqueFd fd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) throw_io("socket", errno);
    auto sa = unix_addr(ep.path);
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) throw_io("connect " + address, errno);
    return std::make_unique<FdTransport>(fd.release());
  }
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), ep.port.c_str(), &hints, &res); rc != 0)
    throw Error(ErrorCode::IoError, "resolve " + address + ": " + ::gai_strerror(rc));
  int last_err = 0;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    detail::UniqueFd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!fd) continue;
    if (::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      return std::make_unique<FdTransport>(fd.release());
    }
    last_err = errno;
  }
  ::freeaddrinfo(res);
  throw_io("connect " + address, last_err ? last_err : ECONNREFUSED);
}

void serve(const fs::path& store_root, const std::string& address, const std::atomic<bool>& stop,
           const std::function<void(const std::string&)>& on_listening) {
  Store::open(store_root);  // fail early when the store is unusable
  auto ep = parse_address(address);
  detail::UniqueFd listener;
  std::string bound;
  if (ep.unix_socket) {
    listener = detail::UniqueFd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!listener) throw_io("socket", errno);
    ::unlink(ep.path.c_str());
    auto sa = unix_addr(ep.path);
    if (::bind(listener.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) throw_io("bind " + address, errno);
    bound = ep.path;
  } else {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), ep.port.c_str(), &hints, &res); rc != 0)
      throw Error(ErrorCode::IoError, "resolve " + address + ": " + ::gai_strerror(rc));
    int last_err = EADDRNOTAVAIL;
    for (auto* ai = res; ai && !listener; ai = ai->ai_next) {
      detail::UniqueFd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
      if (!fd) continue;
      int one = 1;
      ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0)
        listener = std::move(fd);
      else
        last_err = errno;
    }
    ::freeaddrinfo(res);
    if (!listener) throw_io("bind " + address, last_err);
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    char hostbuf[NI_MAXHOST], portbuf[NI_MAXSERV];
    ::getnameinfo(reinterpret_cast<sockaddr*>(&ss), len, hostbuf, sizeof hostbuf, portbuf, sizeof portbuf,
                  NI_NUMERICHOST | NI_NUMERICSERV);
    bound = std::string(hostbuf) + ":" + portbuf;
  }
  if (::listen(listener.get(), 64) != 0) throw_io("listen " + address, errno);
  if (on_listening) on_listening(bound);

  std::vector<std::thread> sessions;
  while (!stop.load()) {
    pollfd pfd{listener.get(), POLLIN, 0};
    int rc = ::poll(&pfd, 1, 100);
    if (rc < 0 && errno != EINTR) throw_io("poll", errno);
    if (rc <= 0) continue;
    int fd = ::accept4(listener.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    sessions.emplace_back([store_root, fd] {
      FdTransport t(fd);
      serve_session(store_root, t);
    });
  }
  for (auto& t : sessions) t.join();
  if (ep.unix_socket) ::unlink(ep.path.c_str());
}

}  // namespace graphstore::sync
