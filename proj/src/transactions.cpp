#include "graphstore/transactions.hpp"

#include <algorithm>
#include <cerrno>
#include <set>

#include "file_util.hpp"
#include "graphstore/indexers.hpp"

namespace graphstore {

using detail::UniqueFd;

Snapshot snapshot(const Store& store, std::string_view graph) {
  auto g = open_graph(store, graph);
  auto st = head_state(store, g);
  return Snapshot{g.name, st.latest, st.commit};
}

namespace {

void require_version_closure(const Store& store, const ObjectId& tree) {
  auto obj = store.locate(tree);
  if (!obj.exists) throw Error(ErrorCode::DanglingCommit, "tree " + tree.hex() + " not in store");
  auto c = closure(store, {tree}, ClosureOptions{.follow_parents = false});
  if (!c.missing.empty())
    throw Error(ErrorCode::DanglingCommit,
                "tree " + tree.hex() + " references missing object " + c.missing.begin()->hex());
  if (!c.corrupt.empty())
    throw Error(ErrorCode::DanglingCommit,
                "tree " + tree.hex() + " references unreadable object " + c.corrupt.begin()->hex());
}

void check_seq(const Store& store, const GraphRef& g, std::uint64_t expected) {
  auto st = head_state(store, g);
  if (st.latest != expected)
    throw Error(ErrorCode::StaleHead, "graph " + g.name + " is at seq " + std::to_string(st.latest) +
                                          ", expected " + std::to_string(expected));
}

fs::path marker_path(const Store& store, const ObjectId& txn) { return store.pending_dir() / txn.hex(); }

void create_marker(Store& store, const ObjectId& txn) {
  auto path = marker_path(store, txn);
  UniqueFd fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644));
  if (!fd) throw_io("create " + path.string(), errno);
  if (store.config().durability != Durability::none) {
    store.flush_fd(fd.get());
    store.flush_dir(store.pending_dir());
  }
}

std::vector<ObjectId> list_txn_dir(const fs::path& dir) {
  std::vector<ObjectId> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec))
    if (auto id = ObjectId::from_hex(e.path().filename().string())) out.push_back(*id);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<CommitResult> commit(Store& store, const std::vector<CommitUpdate>& updates,
                                 std::uint64_t time) {
  if (updates.empty()) throw Error(ErrorCode::InvalidArgument, "commit needs at least one update");
  std::vector<const CommitUpdate*> order;
  for (const auto& u : updates) order.push_back(&u);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->graph < b->graph; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->graph == order[i - 1]->graph)
      throw Error(ErrorCode::InvalidArgument, "graph " + order[i]->graph + " listed twice");

  std::vector<GraphRef> refs;
  std::vector<ObjectId> commits;
  for (const auto* u : order) {
    refs.push_back(open_graph(store, u->graph));
    require_version_closure(store, u->tree);
    CommitObject c{u->tree, {}, time, u->message};
    if (u->expected.commit) c.parents.push_back(*u->expected.commit);
    commits.push_back(put_object(store, c).id);
  }

  std::vector<std::string> names;
  for (const auto& r : refs) names.push_back(r.name);
  std::vector<CommitResult> results;

  if (order.size() == 1) {
    store.step(steps::kCommitObjectsWritten);
    {
      GraphLocks locks(store, names);
      store.step(steps::kCommitLocked);
      check_seq(store, refs[0], order[0]->expected.seq);
      store.step(steps::kCommitVerified);
      auto rec = append_record(store, refs[0], order[0]->expected.seq, commits[0]);
      results.push_back({refs[0].name, rec});
      store.step(steps::kCommitAppended);
    }
    store.step(steps::kCommitUnlocked);
  } else {
    store.step(steps::kTxnObjectsWritten);
    {
      GraphLocks locks(store, names);
      store.step(steps::kTxnLocked);
      for (std::size_t i = 0; i < refs.size(); ++i) check_seq(store, refs[i], order[i]->expected.seq);
      store.step(steps::kTxnVerified);
      TxnRecord txn;
      txn.time = time;
      for (std::size_t i = 0; i < refs.size(); ++i)
        txn.updates.push_back({refs[i].name, order[i]->expected.seq, commits[i]});
      auto txn_id = put_object(store, txn).id;
      store.step(steps::kTxnRecordWritten);
      // From here on the transaction is decided: recovery rolls it forward.
      create_marker(store, txn_id);
      store.step(steps::kTxnMarkerCreated);
      for (std::size_t i = 0; i < refs.size(); ++i) {
        auto rec = append_record(store, refs[i], order[i]->expected.seq, commits[i]);
        results.push_back({refs[i].name, rec});
        store.step(steps::kTxnAppended);
      }
      auto marker = marker_path(store, txn_id);
      if (::unlink(marker.c_str()) != 0 && errno != ENOENT) throw_io("remove " + marker.string(), errno);
      if (store.config().durability != Durability::none) store.flush_dir(store.pending_dir());
      store.step(steps::kTxnMarkerRemoved);
    }
    store.step(steps::kTxnUnlocked);
  }

  for (const auto& r : results) notify_commit(store, r.graph, r.record);
  return results;
}

std::vector<ObjectId> pending_txns(const Store& store) { return list_txn_dir(store.pending_dir()); }
std::vector<ObjectId> failed_txns(const Store& store) { return list_txn_dir(store.failed_dir()); }

RecoveryReport recover_pending(Store& store) {
  RecoveryReport report;
  report.stale_locks_broken = break_stale_locks(store);

  auto archive = [&](const ObjectId& id) {
    std::error_code ec;
    fs::create_directories(store.failed_dir(), ec);
    auto from = marker_path(store, id);
    auto to = store.failed_dir() / id.hex();
    if (::rename(from.c_str(), to.c_str()) != 0) throw_io("archive " + from.string(), errno);
    ++report.abandoned;
  };

  for (const auto& id : pending_txns(store)) {
    ++report.markers;
    TxnRecord txn;
    try {
      txn = load_txn(store, id);
    } catch (const Error&) {
      archive(id);
      continue;
    }
    std::vector<std::string> names;
    for (const auto& u : txn.updates) names.push_back(u.graph);
    GraphLocks locks(store, names);
    // The committer may have finished while we waited for its locks.
    if (::access(marker_path(store, id).c_str(), F_OK) != 0) {
      --report.markers;
      continue;
    }

    enum class Status { applied, pending, diverged };
    std::vector<Status> status;
    std::vector<GraphRef> refs;
    for (const auto& u : txn.updates) {
      refs.push_back(graph_ref(store, u.graph));
      if (!graph_exists(store, u.graph)) {
        status.push_back(Status::diverged);
        continue;
      }
      auto st = head_state(store, refs.back());
      auto at = read_history(store, refs.back(), u.expected_old_seq + 1, u.expected_old_seq + 1);
      if (!at.empty() && at.front().commit == u.commit)
        status.push_back(Status::applied);
      else if (st.latest == u.expected_old_seq)
        status.push_back(Status::pending);
      else
        status.push_back(Status::diverged);
    }
    if (std::find(status.begin(), status.end(), Status::diverged) != status.end()) {
      archive(id);
      continue;
    }
    for (std::size_t i = 0; i < txn.updates.size(); ++i) {
      if (status[i] != Status::pending) continue;
      auto rec = append_record(store, refs[i], txn.updates[i].expected_old_seq, txn.updates[i].commit);
      ++report.rolled_forward;
      notify_commit(store, refs[i].name, rec);
    }
    auto marker = marker_path(store, id);
    if (::unlink(marker.c_str()) != 0 && errno != ENOENT) throw_io("remove " + marker.string(), errno);
    if (store.config().durability != Durability::none) store.flush_dir(store.pending_dir());
  }
  return report;
}

}  // namespace graphstore
