#include "graphstore/integrity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "file_util.hpp"

namespace graphstore {

namespace {

struct ObjectInfo {
  bool ok = false;
  std::string reason;
  ObjectKind kind = ObjectKind::blob;
  std::vector<ObjectId> children;  // tree entries, a commit's tree, a txn's commits
};

using ObjectTable = std::unordered_map<ObjectId, ObjectInfo>;

ObjectInfo inspect(const ObjectId& id, const fs::path& path, bool verify_hashes) {
  ObjectInfo info;
  std::optional<std::string> bytes;
  try {
    bytes = detail::read_file_if_exists(path);
  } catch (const Error& e) {
    info.reason = "unreadable";
    return info;
  }
  if (!bytes) {
    info.reason = "vanished";
    return info;
  }
  if (verify_hashes && ObjectId::hash(*bytes) != id) {
    info.reason = "hash mismatch";
    return info;
  }
  try {
    auto obj = parse_canonical(*bytes);
    info.kind = obj.kind;
    switch (obj.kind) {
      case ObjectKind::blob: break;
      case ObjectKind::tree:
        for (const auto& e : decode_tree(obj.content).entries) info.children.push_back(e.id);
        break;
      case ObjectKind::commit: info.children.push_back(decode_commit(obj.content).tree); break;
      case ObjectKind::txn:
        for (const auto& u : decode_txn(obj.content).updates) info.children.push_back(u.commit);
        break;
    }
  } catch (const Error& e) {
    info.reason = e.code() == ErrorCode::ParseError ? "undecodable content" : "malformed header";
    return info;
  }
  info.ok = true;
  return info;
}

// damaged(id): id or something in its version closure is missing or corrupt.
class DamageOracle {
 public:
  explicit DamageOracle(const ObjectTable& table) : table_(table) {}

  bool damaged(const ObjectId& root) {
    if (auto it = memo_.find(root); it != memo_.end()) return it->second;
    std::vector<std::pair<ObjectId, bool>> stack{{root, false}};
    while (!stack.empty()) {
      auto [id, expanded] = stack.back();
      if (memo_.count(id)) {
        stack.pop_back();
        continue;
      }
      auto it = table_.find(id);
      if (it == table_.end() || !it->second.ok) {
        memo_[id] = true;
        stack.pop_back();
        continue;
      }
      if (!expanded) {
        stack.back().second = true;
        for (const auto& c : it->second.children)
          if (!memo_.count(c)) stack.push_back({c, false});
        continue;
      }
      bool bad = false;
      for (const auto& c : it->second.children) {
        auto m = memo_.find(c);
        bad = bad || m == memo_.end() || m->second;
      }
      memo_[id] = bad;
      stack.pop_back();
    }
    return memo_[root];
  }

  // Every (referrer, missing child) pair inside a damaged closure.
  void dangling(const ObjectId& root, std::vector<std::pair<ObjectId, ObjectId>>& out) {
    IdSet seen;
    std::vector<ObjectId> stack{root};
    while (!stack.empty()) {
      auto id = stack.back();
      stack.pop_back();
      if (!seen.insert(id).second || !damaged(id)) continue;
      auto it = table_.find(id);
      if (it == table_.end() || !it->second.ok) continue;
      for (const auto& c : it->second.children) {
        if (!table_.count(c))
          out.emplace_back(id, c);
        else
          stack.push_back(c);
      }
    }
  }

 private:
  const ObjectTable& table_;
  std::unordered_map<ObjectId, bool> memo_;
};

}  // namespace

bool FsckReport::clean() const noexcept {
  return corrupt.empty() && dangling.empty() && impacted.empty() && torn_heads.empty() &&
         stale_locks.empty() && orphaned_markers.empty() && bad_heads.empty();
}

FsckReport fsck(const Store& store, bool verify_hashes) {
  FsckReport report;
  ObjectTable table;
  std::map<ObjectId, fs::path> paths;
  store.for_each_object([&](const ObjectId& id, const fs::path& p) {
    table.emplace(id, inspect(id, p, verify_hashes));
    paths.emplace(id, p);
  });
  for (const auto& [id, p] : paths) {
    const auto& info = table.at(id);
    if (!info.ok) report.corrupt.push_back({id, info.reason});
  }

  DamageOracle oracle(table);
  std::vector<ObjectId> roots;

  for (const auto& name : list_graphs(store)) {
    auto g = graph_ref(store, name);
    std::vector<HeadRecord> history;
    try {
      auto st = head_state(store, g);
      if (st.torn_bytes) report.torn_heads.push_back({name, st.torn_bytes});
      history = read_history(store, g);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::CorruptHead) throw;
      report.bad_heads.push_back(name);
      continue;
    }
    for (const auto& rec : history) {
      roots.push_back(rec.commit);
      if (!oracle.damaged(rec.commit)) continue;
      report.impacted.push_back({name, rec.seq, rec.commit});
      if (!table.count(rec.commit)) {
        report.dangling.push_back({name, rec.seq, rec.commit, rec.commit});
        continue;
      }
      std::vector<std::pair<ObjectId, ObjectId>> pairs;
      oracle.dangling(rec.commit, pairs);
      std::sort(pairs.begin(), pairs.end());
      pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
      for (const auto& [from, to] : pairs) report.dangling.push_back({name, rec.seq, from, to});
    }
  }

  auto pending = pending_txns(store);
  for (const auto& id : pending) roots.push_back(id);
  for (const auto& id : failed_txns(store)) roots.push_back(id);

  // Orphans: present but outside every version closure reachable from roots.
  IdSet live;
  std::vector<ObjectId> stack(roots.begin(), roots.end());
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    if (!live.insert(id).second) continue;
    auto it = table.find(id);
    if (it == table.end()) continue;
    for (const auto& c : it->second.children) stack.push_back(c);
  }
  for (const auto& [id, p] : paths) {
    if (live.count(id)) continue;
    report.orphans.push_back({id, detail::file_age_secs(p).value_or(0.0)});
  }

  std::error_code ec;
  for (const auto& e : fs::directory_iterator(store.graphs_dir(), ec)) {
    if (e.path().extension() != ".lock") continue;
    auto age = lock_age(e.path());
    if (age && *age > store.config().lock_timeout_secs) report.stale_locks.push_back({e.path(), *age});
  }
  if (auto age = lock_age(store.root() / "gc.lock"); age && *age > store.config().lock_timeout_secs)
    report.stale_locks.push_back({store.root() / "gc.lock", *age});
  std::sort(report.stale_locks.begin(), report.stale_locks.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });

  // A marker none of whose graphs hold a fresh lock has no live committer
  // behind it.
  for (const auto& id : pending) {
    bool in_flight = false;
    try {
      auto txn = load_txn(store, id);
      for (const auto& u : txn.updates) {
        auto age = lock_age(graph_ref(store, u.graph).lock_path);
        in_flight = in_flight || (age && *age <= store.config().lock_timeout_secs);
      }
    } catch (const Error&) {
    }
    if (!in_flight) report.orphaned_markers.push_back(id);
  }
  return report;
}

std::optional<Snapshot> find_last_intact(const Store& store, std::string_view graph,
                                         bool verify_hashes) {
  auto g = open_graph(store, graph);
  auto history = read_history(store, g);
  std::unordered_map<ObjectId, bool> verdict;
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    auto cached = verdict.find(it->commit);
    bool intact;
    if (cached != verdict.end()) {
      intact = cached->second;
    } else {
      auto c = closure(store, {it->commit},
                       ClosureOptions{.follow_parents = false, .verify_hashes = verify_hashes});
      intact = c.missing.empty() && c.corrupt.empty();
      verdict.emplace(it->commit, intact);
    }
    if (intact) return Snapshot{g.name, it->seq, it->commit};
  }
  return std::nullopt;
}

std::string FsckReport::to_text() const {
  std::ostringstream out;
  for (const auto& c : corrupt) out << "corrupt " << c.id.hex() << ' ' << c.reason << '\n';
  for (const auto& d : dangling)
    out << "dangling " << d.graph << ' ' << d.seq << ' ' << d.referrer.hex() << ' ' << d.missing.hex() << '\n';
  for (const auto& i : impacted) out << "impacted " << i.graph << ' ' << i.seq << ' ' << i.commit.hex() << '\n';
  for (const auto& t : torn_heads) out << "torn-head " << t.graph << ' ' << t.torn_bytes << '\n';
  for (const auto& b : bad_heads) out << "bad-head " << b << '\n';
  for (const auto& l : stale_locks)
    out << "stale-lock " << l.path.string() << ' ' << static_cast<long long>(std::floor(l.age_secs)) << '\n';
  for (const auto& m : orphaned_markers) out << "orphaned-marker " << m.hex() << '\n';
  for (const auto& o : orphans)
    out << "orphan " << o.id.hex() << ' ' << static_cast<long long>(std::floor(o.age_secs)) << '\n';
  return out.str();
}

std::string FsckReport::to_json() const {
  using nlohmann::json;
  json j;
  j["clean"] = clean();
  j["corrupt"] = json::array();
  for (const auto& c : corrupt) j["corrupt"].push_back({{"id", c.id.hex()}, {"reason", c.reason}});
  j["dangling"] = json::array();
  for (const auto& d : dangling)
    j["dangling"].push_back({{"graph", d.graph}, {"seq", d.seq}, {"referrer", d.referrer.hex()},
                             {"missing", d.missing.hex()}});
  j["impacted"] = json::array();
  for (const auto& i : impacted)
    j["impacted"].push_back({{"graph", i.graph}, {"seq", i.seq}, {"commit", i.commit.hex()}});
  j["torn_heads"] = json::array();
  for (const auto& t : torn_heads) j["torn_heads"].push_back({{"graph", t.graph}, {"bytes", t.torn_bytes}});
  j["bad_heads"] = bad_heads;
  j["stale_locks"] = json::array();
  for (const auto& l : stale_locks)
    j["stale_locks"].push_back({{"path", l.path.string()}, {"age_secs", l.age_secs}});
  j["orphaned_markers"] = json::array();
  for (const auto& m : orphaned_markers) j["orphaned_markers"].push_back(m.hex());
  j["orphans"] = json::array();
  for (const auto& o : orphans) j["orphans"].push_back({{"id", o.id.hex()}, {"age_secs", o.age_secs}});
  return j.dump(2) + "\n";
}

}  // namespace graphstore
