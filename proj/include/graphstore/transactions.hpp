#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graphstore/graph_objects.hpp"
#include "graphstore/head_log.hpp"

namespace graphstore {

struct Snapshot {
  std::string graph;
  std::uint64_t seq = 0;
  std::optional<ObjectId> commit;

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

/// Latest complete head record, read without locking.
Snapshot snapshot(const Store& store, std::string_view graph);

struct CommitUpdate {
  std::string graph;
  Snapshot expected;
  ObjectId tree;
  std::string message;
};

struct CommitResult {
  std::string graph;
  HeadRecord record;
};

// Step names reported to Store::step during commit. Single-graph commits
// report commit.* steps, multi-graph commits report txn.* steps.
namespace steps {
inline constexpr std::string_view kCommitObjectsWritten = "commit.objects_written";
inline constexpr std::string_view kCommitLocked = "commit.locked";
inline constexpr std::string_view kCommitVerified = "commit.verified";
inline constexpr std::string_view kCommitAppended = "commit.appended";
inline constexpr std::string_view kCommitUnlocked = "commit.unlocked";
inline constexpr std::string_view kTxnObjectsWritten = "txn.objects_written";
inline constexpr std::string_view kTxnLocked = "txn.locked";
inline constexpr std::string_view kTxnVerified = "txn.verified";
inline constexpr std::string_view kTxnRecordWritten = "txn.record_written";
inline constexpr std::string_view kTxnMarkerCreated = "txn.marker_created";
inline constexpr std::string_view kTxnAppended = "txn.appended";  // once per graph
inline constexpr std::string_view kTxnMarkerRemoved = "txn.marker_removed";
inline constexpr std::string_view kTxnUnlocked = "txn.unlocked";
}  // namespace steps

/// Creates one commit per update and advances every graph by exactly one
/// record, atomically across graphs. Throws StaleHead (nothing appended) when
/// any expected snapshot is out of date.
std::vector<CommitResult> commit(Store& store, const std::vector<CommitUpdate>& updates,
                                 std::uint64_t time);

struct RecoveryReport {
  std::size_t markers = 0;
  std::size_t rolled_forward = 0;  // head records appended
  std::size_t abandoned = 0;
  std::size_t stale_locks_broken = 0;
};

/// Completes interrupted multi-graph commits. Run on open, before writes.
RecoveryReport recover_pending(Store& store);

std::vector<ObjectId> pending_txns(const Store& store);
std::vector<ObjectId> failed_txns(const Store& store);

}  // namespace graphstore
