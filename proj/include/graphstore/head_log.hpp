#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "graphstore/object_store.hpp"

namespace graphstore {

struct HeadRecord {
  std::uint64_t seq = 0;
  ObjectId commit;

  friend bool operator==(const HeadRecord&, const HeadRecord&) = default;
};

inline constexpr std::size_t kHeadRecordSize = 82;

/// `%016x seq` SP `commit-hex` LF.
std::string format_head_record(const HeadRecord& rec);
std::optional<HeadRecord> parse_head_record(std::string_view bytes);

struct GraphRef {
  std::string name;
  fs::path head_path;
  fs::path lock_path;
  fs::path base_path;
};

bool valid_graph_name(std::string_view name) noexcept;

GraphRef graph_ref(const Store& store, std::string_view name);
GraphRef create_graph(Store& store, std::string_view name);
bool graph_exists(const Store& store, std::string_view name);
/// Throws NotFound for unknown graphs.
GraphRef open_graph(const Store& store, std::string_view name);
std::vector<std::string> list_graphs(const Store& store);

struct HeadState {
  std::uint64_t base = 1;       // absolute seq of the first retained record
  std::uint64_t latest = 0;     // base - 1 when empty
  std::optional<ObjectId> commit;
  std::uint64_t torn_bytes = 0; // length of a partial trailing record
};

/// Latest complete record, ignoring a torn tail. Lock-free.
HeadState head_state(const Store& store, const GraphRef& g);

/// Records with from_seq <= seq <= to_seq in ascending order. A partial
/// trailing record is ignored. Lock-free.
std::vector<HeadRecord> read_history(const Store& store, const GraphRef& g,
                                     std::uint64_t from_seq = 0,
                                     std::uint64_t to_seq = UINT64_MAX);

/// Appends seq = expected_old_seq + 1. Caller must hold the graph lock.
HeadRecord append_record(Store& store, const GraphRef& g, std::uint64_t expected_old_seq,
                         const ObjectId& commit);

/// Appends a new record repeating the commit found at to_seq.
HeadRecord rewind(Store& store, const GraphRef& g, std::uint64_t to_seq);

struct PruneResult {
  std::uint64_t base = 1;
  std::size_t kept = 0;
  std::size_t removed = 0;
};

/// Keeps only the newest keep_last records. Caller must hold the graph lock.
PruneResult prune(Store& store, const GraphRef& g, std::size_t keep_last);

// Advisory exclusive-create lock file with timestamp-based staleness.
class FileLock {
 public:
  FileLock() = default;
  FileLock(fs::path path, std::string holder) : path_(std::move(path)), holder_(std::move(holder)) {}
  FileLock(FileLock&& o) noexcept;
  FileLock& operator=(FileLock&& o) noexcept;
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  ~FileLock() { release(); }

  /// Retries until acquired or timeout elapses; stale files are broken.
  static FileLock acquire(const fs::path& path, const std::string& holder, double timeout_secs);
  static std::optional<FileLock> try_acquire(const fs::path& path, const std::string& holder,
                                             double stale_after_secs);

  void release() noexcept;
  bool held() const noexcept { return !path_.empty(); }
  const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
  std::string holder_;
};

/// Seconds since the lock file was last modified, or nullopt if absent.
std::optional<double> lock_age(const fs::path& path);

/// Locks every graph in byte-lexicographic order, runs body, releases all
/// locks on every exit path.
template <typename Body>
auto with_lock(Store& store, std::vector<std::string> graphs, Body&& body);

class GraphLocks {
 public:
  GraphLocks(Store& store, std::vector<std::string> graphs);
  ~GraphLocks();
  GraphLocks(const GraphLocks&) = delete;
  GraphLocks& operator=(const GraphLocks&) = delete;

 private:
  Store& store_;
  std::vector<std::string> names_;
  std::vector<FileLock> locks_;
};

template <typename Body>
auto with_lock(Store& store, std::vector<std::string> graphs, Body&& body) {
  GraphLocks locks(store, std::move(graphs));
  return std::forward<Body>(body)();
}

template <typename Body>
auto with_lock(Store& store, const std::string& graph, Body&& body) {
  return with_lock(store, std::vector<std::string>{graph}, std::forward<Body>(body));
}

/// Removes lock files under graphs/ older than the store's lock timeout.
std::size_t break_stale_locks(Store& store);

}  // namespace graphstore
