#pragma once

#include <cstdint>

#include "graphstore/graph_objects.hpp"

namespace graphstore {

/// Every object reachable from any head record of any graph, from pending and
/// failed transaction records, plus those transaction records themselves.
IdSet reachable_set(const Store& store);

struct GcReport {
  std::uint64_t examined = 0;
  std::uint64_t deleted = 0;
  std::uint64_t retained_by_grace = 0;
  std::uint64_t errors = 0;
  std::uint64_t temp_files_deleted = 0;
};

/// Deletes unreachable objects older than grace_secs. Throws LockTimeout when
/// another collector holds gc.lock.
GcReport collect(Store& store, double grace_secs, bool dry_run);

}  // namespace graphstore
