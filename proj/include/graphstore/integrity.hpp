#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graphstore/transactions.hpp"

namespace graphstore {

struct CorruptEntry {
  ObjectId id;
  std::string reason;
};

struct DanglingRef {
  std::string graph;
  std::uint64_t seq;
  ObjectId referrer;  // object holding the reference
  ObjectId missing;
};

struct ImpactedVersion {
  std::string graph;
  std::uint64_t seq;
  ObjectId commit;
};

struct OrphanEntry {
  ObjectId id;
  double age_secs;
};

struct TornHead {
  std::string graph;
  std::uint64_t torn_bytes;
};

struct StaleLock {
  fs::path path;
  double age_secs;
};

struct FsckReport {
  std::vector<CorruptEntry> corrupt;
  std::vector<DanglingRef> dangling;
  std::vector<ImpactedVersion> impacted;
  std::vector<OrphanEntry> orphans;
  std::vector<TornHead> torn_heads;
  std::vector<StaleLock> stale_locks;
  std::vector<ObjectId> orphaned_markers;
  std::vector<std::string> bad_heads;  // head files with malformed interior records

  /// No defects. Orphans are debris awaiting GC, not defects.
  bool clean() const noexcept;
  bool empty() const noexcept { return clean() && orphans.empty(); }

  std::string to_text() const;
  std::string to_json() const;
};

/// Read-only store audit.
FsckReport fsck(const Store& store, bool verify_hashes);

/// Newest head record whose version (commit plus its tree closure) is fully
/// present and, when verify_hashes, re-hashes clean.
std::optional<Snapshot> find_last_intact(const Store& store, std::string_view graph,
                                         bool verify_hashes = false);

}  // namespace graphstore
