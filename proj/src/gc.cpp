#include "graphstore/gc.hpp"

#include <unistd.h>

#include "file_util.hpp"
#include "graphstore/head_log.hpp"
#include "graphstore/transactions.hpp"

namespace graphstore {

IdSet reachable_set(const Store& store) {
  std::vector<ObjectId> roots;
  for (const auto& name : list_graphs(store))
    for (const auto& rec : read_history(store, graph_ref(store, name))) roots.push_back(rec.commit);
  for (const auto& id : pending_txns(store)) roots.push_back(id);
  for (const auto& id : failed_txns(store)) roots.push_back(id);

  // Every retained version is itself a root, so parent links add nothing but
  // would pin pruned history forever.
  auto c = closure(store, roots, ClosureOptions{.follow_parents = false});
  IdSet out = std::move(c.reachable);
  out.insert(c.corrupt.begin(), c.corrupt.end());
  return out;
}

GcReport collect(Store& store, double grace_secs, bool dry_run) {
  auto lock_path = store.root() / "gc.lock";
  auto lock = FileLock::try_acquire(lock_path, store.holder_id(), store.config().lock_timeout_secs);
  if (!lock) lock = FileLock::try_acquire(lock_path, store.holder_id(), store.config().lock_timeout_secs);
  if (!lock) throw Error(ErrorCode::LockTimeout, "another collector holds " + lock_path.string());

  GcReport report;
  auto live = reachable_set(store);
  store.for_each_object([&](const ObjectId& id, const fs::path& path) {
    ++report.examined;
    if (live.count(id)) return;
    auto age = detail::file_age_secs(path);
    if (!age) return;
    if (*age < grace_secs) {
      ++report.retained_by_grace;
      return;
    }
    if (dry_run || ::unlink(path.c_str()) == 0)
      ++report.deleted;
    else
      ++report.errors;
  });

  std::error_code ec;
  for (const auto& e : fs::directory_iterator(store.objects_dir() / "tmp", ec)) {
    auto age = detail::file_age_secs(e.path());
    if (!age || *age < grace_secs) continue;
    if (dry_run || ::unlink(e.path().c_str()) == 0) ++report.temp_files_deleted;
  }
  return report;
}

}  // namespace graphstore
