#include "graphstore/head_log.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <thread>

#include "file_util.hpp"

namespace graphstore {

using detail::UniqueFd;

std::string format_head_record(const HeadRecord& rec) {
  char seq[17];
  std::snprintf(seq, sizeof seq, "%016llx", static_cast<unsigned long long>(rec.seq));
  std::string out;
  out.reserve(kHeadRecordSize);
  out.append(seq, 16).push_back(' ');
  out.append(rec.commit.hex()).push_back('\n');
  return out;
}

std::optional<HeadRecord> parse_head_record(std::string_view b) {
  if (b.size() != kHeadRecordSize || b[16] != ' ' || b[81] != '\n') return std::nullopt;
  std::uint64_t seq = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    char c = b[i];
    int v;
    if (c >= '0' && c <= '9')
      v = c - '0';
    else if (c >= 'a' && c <= 'f')
      v = c - 'a' + 10;
    else
      return std::nullopt;
    seq = seq << 4 | static_cast<std::uint64_t>(v);
  }
  auto id = ObjectId::from_hex(b.substr(17, 64));
  if (!id) return std::nullopt;
  return HeadRecord{seq, *id};
}

bool valid_graph_name(std::string_view name) noexcept {
  if (name.empty() || name.size() > 128) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
           c == '.' || c == '_' || c == '-';
  });
}

GraphRef graph_ref(const Store& store, std::string_view name) {
  if (!valid_graph_name(name)) throw Error(ErrorCode::InvalidName, "graph name '" + std::string(name) + "'");
  auto dir = store.graphs_dir();
  std::string n(name);
  return GraphRef{n, dir / (n + ".head"), dir / (n + ".lock"), dir / (n + ".base")};
}

GraphRef create_graph(Store& store, std::string_view name) {
  auto g = graph_ref(store, name);
  UniqueFd fd(::open(g.head_path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644));
  if (!fd) {
    if (errno == EEXIST) throw Error(ErrorCode::GraphExists, g.name);
    throw_io("create " + g.head_path.string(), errno);
  }
  if (store.config().durability != Durability::none) store.flush_dir(store.graphs_dir());
  return g;
}

bool graph_exists(const Store& store, std::string_view name) {
  return valid_graph_name(name) && ::access(graph_ref(store, name).head_path.c_str(), F_OK) == 0;
}

GraphRef open_graph(const Store& store, std::string_view name) {
  auto g = graph_ref(store, name);
  if (::access(g.head_path.c_str(), F_OK) != 0) throw Error(ErrorCode::NotFound, "graph " + g.name);
  return g;
}

std::vector<std::string> list_graphs(const Store& store) {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(store.graphs_dir(), ec)) {
    auto fname = e.path().filename().string();
    constexpr std::string_view kSuffix = ".head";
    if (fname.size() <= kSuffix.size() || !fname.ends_with(kSuffix)) continue;
    auto name = fname.substr(0, fname.size() - kSuffix.size());
    if (valid_graph_name(name)) out.push_back(std::move(name));
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::uint64_t read_base_file(const GraphRef& g) {
  auto text = detail::read_file_if_exists(g.base_path);
  if (!text) return 1;
  std::string_view t(*text);
  while (!t.empty() && (t.back() == '\n' || t.back() == '\r')) t.remove_suffix(1);
  std::uint64_t base = 0;
  if (!detail::parse_u64(t, base) || base == 0)
    throw Error(ErrorCode::CorruptHead, "malformed base file for graph " + g.name);
  return base;
}

HeadRecord read_record_at(int fd, std::uint64_t index, const GraphRef& g) {
  char buf[kHeadRecordSize];
  auto off = static_cast<off_t>(index * kHeadRecordSize);
  ssize_t n = ::pread(fd, buf, sizeof buf, off);
  if (n != static_cast<ssize_t>(sizeof buf)) {
    if (n < 0) throw_io("read " + g.head_path.string(), errno);
    throw Error(ErrorCode::CorruptHead, "short read in head of graph " + g.name);
  }
  auto rec = parse_head_record(std::string_view(buf, sizeof buf));
  if (!rec)
    throw Error(ErrorCode::CorruptHead,
                "malformed record " + std::to_string(index) + " in head of graph " + g.name);
  return *rec;
}

HeadState state_from_fd(int fd, const GraphRef& g) {
  struct stat st{};
  if (::fstat(fd, &st) != 0) throw_io("stat " + g.head_path.string(), errno);
  auto size = static_cast<std::uint64_t>(st.st_size);
  HeadState s;
  s.torn_bytes = size % kHeadRecordSize;
  auto count = size / kHeadRecordSize;
  if (count == 0) {
    s.base = read_base_file(g);
    s.latest = s.base - 1;
    return s;
  }
  auto first = read_record_at(fd, 0, g);
  auto last = count == 1 ? first : read_record_at(fd, count - 1, g);
  if (first.seq == 0 || last.seq != first.seq + count - 1)
    throw Error(ErrorCode::CorruptHead, "non-consecutive sequence numbers in head of graph " + g.name);
  s.base = first.seq;
  s.latest = last.seq;
  s.commit = last.commit;
  return s;
}

UniqueFd open_head(const GraphRef& g, int flags) {
  UniqueFd fd(::open(g.head_path.c_str(), flags | O_CLOEXEC));
  if (!fd) {
    if (errno == ENOENT) throw Error(ErrorCode::NotFound, "graph " + g.name);
    throw_io("open " + g.head_path.string(), errno);
  }
  return fd;
}

void require_lock(const Store& store, const GraphRef& g) {
  if (!store.holds_lock(g.name))
    throw Error(ErrorCode::LockRequired, "lock on graph " + g.name + " not held");
  auto content = detail::read_file_if_exists(g.lock_path);
  if (!content || !content->starts_with(store.holder_id() + " "))
    throw Error(ErrorCode::LockRequired, "lock on graph " + g.name + " was lost");
}

}  // namespace

HeadState head_state(const Store& store, const GraphRef& g) {
  (void)store;
  auto fd = open_head(g, O_RDONLY);
  return state_from_fd(fd.get(), g);
}

std::vector<HeadRecord> read_history(const Store& store, const GraphRef& g, std::uint64_t from_seq,
                                     std::uint64_t to_seq) {
  (void)store;
  auto data = detail::read_file_if_exists(g.head_path);
  if (!data) throw Error(ErrorCode::NotFound, "graph " + g.name);
  auto count = data->size() / kHeadRecordSize;
  std::vector<HeadRecord> out;
  std::uint64_t expect = 0;
  for (std::size_t i = 0; i < count; ++i) {
    auto rec = parse_head_record(std::string_view(*data).substr(i * kHeadRecordSize, kHeadRecordSize));
    if (!rec)
      throw Error(ErrorCode::CorruptHead,
                  "malformed record " + std::to_string(i) + " in head of graph " + g.name);
    if (i == 0) expect = rec->seq;
    if (rec->seq != expect || rec->seq == 0)
      throw Error(ErrorCode::CorruptHead, "non-consecutive sequence numbers in head of graph " + g.name);
    ++expect;
    if (rec->seq >= from_seq && rec->seq <= to_seq) out.push_back(*rec);
  }
  return out;
}

HeadRecord append_record(Store& store, const GraphRef& g, std::uint64_t expected_old_seq,
                         const ObjectId& commit) {
  require_lock(store, g);
  if (!store.contains(commit)) throw Error(ErrorCode::DanglingCommit, "commit " + commit.hex() + " not in store");
  auto fd = open_head(g, O_RDWR | O_APPEND);
  struct stat st{};
  if (::fstat(fd.get(), &st) != 0) throw_io("stat " + g.head_path.string(), errno);
  auto size = static_cast<std::uint64_t>(st.st_size);
  if (size % kHeadRecordSize != 0) {
    // A previous writer died mid-append; drop the partial record.
    auto keep = static_cast<off_t>(size - size % kHeadRecordSize);
    if (::ftruncate(fd.get(), keep) != 0) throw_io("truncate " + g.head_path.string(), errno);
  }
  auto state = state_from_fd(fd.get(), g);
  if (state.latest != expected_old_seq)
    throw Error(ErrorCode::StaleHead, "graph " + g.name + " is at seq " + std::to_string(state.latest) +
                                          ", expected " + std::to_string(expected_old_seq));
  HeadRecord rec{expected_old_seq + 1, commit};
  auto line = format_head_record(rec);
  ssize_t n = ::write(fd.get(), line.data(), line.size());
  if (n != static_cast<ssize_t>(line.size())) {
    int err = n < 0 ? errno : EIO;
    if (::ftruncate(fd.get(), static_cast<off_t>((state.latest - state.base + 1) * kHeadRecordSize)) != 0) {
      // Leave the torn tail; the next append or reader ignores it.
    }
    throw_io("append " + g.head_path.string(), err);
  }
  if (store.config().durability != Durability::none) store.flush_fd(fd.get(), true);
  return rec;
}

HeadRecord rewind(Store& store, const GraphRef& g, std::uint64_t to_seq) {
  auto state = head_state(store, g);
  if (to_seq == 0 || to_seq < state.base || to_seq > state.latest)
    throw Error(ErrorCode::BadSeq, "seq " + std::to_string(to_seq) + " not in [" +
                                       std::to_string(state.base) + ", " + std::to_string(state.latest) + "]");
  auto recs = read_history(store, g, to_seq, to_seq);
  if (recs.empty()) throw Error(ErrorCode::BadSeq, "seq " + std::to_string(to_seq));
  return append_record(store, g, state.latest, recs.front().commit);
}

PruneResult prune(Store& store, const GraphRef& g, std::size_t keep_last) {
  if (keep_last == 0) throw Error(ErrorCode::InvalidArgument, "keep_last must be >= 1");
  require_lock(store, g);
  auto recs = read_history(store, g);
  auto state = head_state(store, g);
  PruneResult result{state.base, recs.size(), 0};
  if (keep_last >= recs.size()) return result;

  const bool flush = store.config().durability != Durability::none;
  auto first = recs.size() - keep_last;
  std::string body;
  body.reserve(keep_last * kHeadRecordSize);
  for (auto i = first; i < recs.size(); ++i) body += format_head_record(recs[i]);
  auto base = recs[first].seq;

  auto suffix = ".tmp-" + detail::random_hex(8);
  auto base_tmp = fs::path(g.base_path.string() + suffix);
  auto head_tmp = fs::path(g.head_path.string() + suffix);
  auto write_tmp = [&](const fs::path& p, std::string_view data) {
    UniqueFd fd(::open(p.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644));
    if (!fd) throw_io("create " + p.string(), errno);
    detail::write_all_fd(fd.get(), data, p);
    if (flush) store.flush_fd(fd.get());
  };
  write_tmp(base_tmp, std::to_string(base) + "\n");
  write_tmp(head_tmp, body);
  // Records carry absolute seqs, so readers derive the base from the first
  // record; the sidecar only matters for an empty log.
  if (::rename(base_tmp.c_str(), g.base_path.c_str()) != 0) throw_io("rename " + base_tmp.string(), errno);
  if (::rename(head_tmp.c_str(), g.head_path.c_str()) != 0) throw_io("rename " + head_tmp.string(), errno);
  if (flush) store.flush_dir(store.graphs_dir());
  return PruneResult{base, keep_last, first};
}

std::optional<double> lock_age(const fs::path& path) { return detail::file_age_secs(path); }

FileLock::FileLock(FileLock&& o) noexcept
    : path_(std::exchange(o.path_, {})), holder_(std::move(o.holder_)) {}

FileLock& FileLock::operator=(FileLock&& o) noexcept {
  if (this != &o) {
    release();
    path_ = std::exchange(o.path_, {});
    holder_ = std::move(o.holder_);
  }
  return *this;
}

std::optional<FileLock> FileLock::try_acquire(const fs::path& path, const std::string& holder,
                                              double stale_after_secs) {
  UniqueFd fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644));
  if (fd) {
    auto line = holder + " " + std::to_string(detail::now_unix()) + "\n";
    FileLock lock(path, holder);
    detail::write_all_fd(fd.get(), line, path);
    return lock;
  }
  if (errno != EEXIST) throw_io("create " + path.string(), errno);
  auto age = lock_age(path);
  if (age && *age > stale_after_secs) {
    // Holder presumed dead. Only remove the file we judged stale.
    auto before = detail::read_file_if_exists(path);
    auto again = lock_age(path);
    auto after = detail::read_file_if_exists(path);
    if (before && after && *before == *after && again && *again > stale_after_secs)
      ::unlink(path.c_str());
  }
  return std::nullopt;
}

FileLock FileLock::acquire(const fs::path& path, const std::string& holder, double timeout_secs) {
  using clock = std::chrono::steady_clock;
  auto deadline = clock::now() + std::chrono::duration<double>(timeout_secs);
  auto backoff = std::chrono::microseconds(500);
  for (;;) {
    if (auto lock = try_acquire(path, holder, timeout_secs)) return std::move(*lock);
    if (clock::now() >= deadline) {
      if (auto lock = try_acquire(path, holder, timeout_secs)) return std::move(*lock);
      throw Error(ErrorCode::LockTimeout, path.string());
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::min(backoff * 2, std::chrono::microseconds(20000));
  }
}

void FileLock::release() noexcept {
  if (path_.empty()) return;
  try {
    auto content = detail::read_file_if_exists(path_);
    if (content && content->starts_with(holder_ + " ")) ::unlink(path_.c_str());
  } catch (...) {
  }
  path_.clear();
}

GraphLocks::GraphLocks(Store& store, std::vector<std::string> graphs) : store_(store) {
  std::sort(graphs.begin(), graphs.end());
  graphs.erase(std::unique(graphs.begin(), graphs.end()), graphs.end());
  try {
    for (auto& name : graphs) {
      if (store_.holds_lock(name)) continue;  // reentrant within one handle
      auto g = graph_ref(store_, name);
      locks_.push_back(FileLock::acquire(g.lock_path, store_.holder_id(), store_.config().lock_timeout_secs));
      store_.note_lock(name, true);
      names_.push_back(name);
    }
  } catch (...) {
    for (const auto& n : names_) store_.note_lock(n, false);
    throw;
  }
}

GraphLocks::~GraphLocks() {
  for (auto i = locks_.size(); i-- > 0;) {
    locks_[i].release();
    store_.note_lock(names_[i], false);
  }
}

std::size_t break_stale_locks(Store& store) {
  std::size_t broken = 0;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(store.graphs_dir(), ec)) {
    if (e.path().extension() != ".lock") continue;
    auto age = lock_age(e.path());
    if (age && *age > store.config().lock_timeout_secs && ::unlink(e.path().c_str()) == 0) ++broken;
  }
  return broken;
}

}  // namespace graphstore
