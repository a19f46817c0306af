#include "graphstore/indexers.hpp"

#include <stdio.h>

#include <algorithm>
#include <cerrno>
#include <fstream>

#include "file_util.hpp"
#include "graphstore/graph_objects.hpp"
#include "graphstore/integrity.hpp"
#include "graphstore/transactions.hpp"

namespace graphstore {

namespace {

using PathEntries = std::vector<std::pair<std::string, ObjectId>>;

const std::string kNoHead(ObjectId::kHexSize, '0');

void walk_tree(const Store& store, const ObjectId& tree, const std::string& prefix, PathEntries& out) {
  for (const auto& e : load_tree(store, tree).entries) {
    auto path = prefix.empty() ? e.name : prefix + "/" + e.name;
    if (e.kind == ObjectKind::tree)
      walk_tree(store, e.id, path, out);
    else
      out.emplace_back(std::move(path), e.id);
  }
}

void write_path_index(const fs::path& out, const std::optional<ObjectId>& head, PathEntries entries) {
  std::sort(entries.begin(), entries.end());
  std::string text = "head " + (head ? head->hex() : kNoHead) + "\n";
  for (const auto& [path, id] : entries) text += id.hex() + " " + path + "\n";
  auto file = out / PathIndexer::kFile;
  detail::UniqueFd fd(::open(file.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
  if (!fd) throw_io("create " + file.string(), errno);
  detail::write_all_fd(fd.get(), text, file);
}

struct LoadedPathIndex {
  std::optional<ObjectId> head;
  PathEntries entries;  // sorted by path
};

LoadedPathIndex load_path_index(const fs::path& dir) {
  auto text = detail::read_file_if_exists(dir / PathIndexer::kFile);
  if (!text) throw Error(ErrorCode::IndexMissing, dir.string());
  std::string_view t(*text);
  LoadedPathIndex idx;
  auto nl = t.find('\n');
  if (nl == std::string_view::npos || !t.starts_with("head "))
    throw Error(ErrorCode::ParseError, "path index header in " + dir.string());
  auto head_hex = t.substr(5, nl - 5);
  if (head_hex != kNoHead) idx.head = ObjectId::parse(head_hex);
  t.remove_prefix(nl + 1);
  while (!t.empty()) {
    nl = t.find('\n');
    if (nl == std::string_view::npos || nl < ObjectId::kHexSize + 2 || t[ObjectId::kHexSize] != ' ')
      throw Error(ErrorCode::ParseError, "path index line in " + dir.string());
    idx.entries.emplace_back(std::string(t.substr(ObjectId::kHexSize + 1, nl - ObjectId::kHexSize - 1)),
                             ObjectId::parse(t.substr(0, ObjectId::kHexSize)));
    t.remove_prefix(nl + 1);
  }
  return idx;
}

// Entries at or below `prefix` ("" means everything).
std::pair<PathEntries::const_iterator, PathEntries::const_iterator> subtree_range(
    const PathEntries& entries, const std::string& prefix) {
  if (prefix.empty()) return {entries.begin(), entries.end()};
  auto lo_key = prefix + "/";
  auto hi_key = prefix + "0";  // '0' follows '/' in byte order
  auto by_path = [](const auto& e, const std::string& k) { return e.first < k; };
  return {std::lower_bound(entries.begin(), entries.end(), lo_key, by_path),
          std::lower_bound(entries.begin(), entries.end(), hi_key, by_path)};
}

void diff_walk(const Store& store, const PathEntries& old_entries,
               const std::optional<ObjectId>& old_tree, const ObjectId& new_tree,
               const std::string& prefix, PathEntries& out) {
  if (old_tree && *old_tree == new_tree) {
    auto [b, e] = subtree_range(old_entries, prefix);
    out.insert(out.end(), b, e);
    return;
  }
  std::optional<TreeObject> before;
  if (old_tree) before = load_tree(store, *old_tree);
  for (const auto& e : load_tree(store, new_tree).entries) {
    auto path = prefix.empty() ? e.name : prefix + "/" + e.name;
    if (e.kind == ObjectKind::blob) {
      out.emplace_back(std::move(path), e.id);
      continue;
    }
    std::optional<ObjectId> prev;
    if (before)
      if (const auto* o = before->find(e.name); o && o->kind == ObjectKind::tree) prev = o->id;
    diff_walk(store, old_entries, prev, e.id, path, out);
  }
}

void swap_in(const fs::path& built, const fs::path& final_dir) {
  if (::renameat2(AT_FDCWD, built.c_str(), AT_FDCWD, final_dir.c_str(), RENAME_EXCHANGE) == 0) {
    std::error_code ec;
    fs::remove_all(built, ec);
    return;
  }
  if (errno != ENOENT) throw_io("swap " + final_dir.string(), errno);
  if (::rename(built.c_str(), final_dir.c_str()) != 0) throw_io("rename " + built.string(), errno);
}

fs::path build_dir(const Store& store, std::string_view graph, std::string_view indexer) {
  auto dir = store.indexes_dir() / std::string(graph) /
             ("." + std::string(indexer) + ".build-" + detail::random_hex(8));
  fs::create_directories(dir);
  return dir;
}

void mark_stale(const fs::path& dir, const std::string& why) {
  std::ofstream(dir / "stale", std::ios::trunc) << why << '\n';
  std::ofstream(dir / "errors.log", std::ios::app) << detail::now_unix() << ' ' << why << '\n';
}

}  // namespace

IndexStats PathIndexer::rebuild(const Store& store, std::string_view, const std::optional<ObjectId>& head,
                                const fs::path& out) {
  PathEntries entries;
  if (head) walk_tree(store, load_commit(store, *head).tree, "", entries);
  IndexStats stats{entries.size()};
  write_path_index(out, head, std::move(entries));
  return stats;
}

IndexStats PathIndexer::on_commit(const Store& store, std::string_view graph,
                                  const std::optional<ObjectId>& old_head, const ObjectId& new_head,
                                  const fs::path& current, const fs::path& out) {
  auto old = load_path_index(current);
  if (old.head != old_head) return rebuild(store, graph, new_head, out);
  std::optional<ObjectId> old_tree;
  if (old_head) old_tree = load_commit(store, *old_head).tree;
  PathEntries entries;
  diff_walk(store, old.entries, old_tree, load_commit(store, new_head).tree, "", entries);
  IndexStats stats{entries.size()};
  write_path_index(out, new_head, std::move(entries));
  return stats;
}

std::optional<std::optional<ObjectId>> PathIndexer::indexed_head(const fs::path& dir) const {
  try {
    return load_path_index(dir).head;
  } catch (const Error&) {
    return std::nullopt;
  }
}

IndexRegistry::IndexRegistry() { add(std::make_unique<PathIndexer>()); }

void IndexRegistry::add(std::unique_ptr<Indexer> indexer) {
  auto name = indexer->name();
  indexers_[name] = std::move(indexer);
}

Indexer* IndexRegistry::find(std::string_view name) const {
  auto it = indexers_.find(name);
  return it == indexers_.end() ? nullptr : it->second.get();
}

std::vector<std::string> IndexRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : indexers_) out.push_back(n);
  return out;
}

fs::path index_dir(const Store& store, std::string_view graph, std::string_view indexer) {
  return store.indexes_dir() / std::string(graph) / std::string(indexer);
}

IndexStats rebuild_index(Store& store, std::string_view graph, std::string_view indexer_name) {
  auto* indexer = store.indexers().find(indexer_name);
  if (!indexer) throw Error(ErrorCode::NotRegistered, "indexer " + std::string(indexer_name));
  auto g = open_graph(store, graph);
  auto intact = find_last_intact(store, g.name);
  std::optional<ObjectId> head;
  if (intact) head = intact->commit;

  auto built = build_dir(store, g.name, indexer_name);
  try {
    auto stats = indexer->rebuild(store, g.name, head, built);
    swap_in(built, index_dir(store, g.name, indexer_name));
    return stats;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(built, ec);
    throw;
  }
}

std::optional<ObjectId> query_path(const Store& store, std::string_view graph, std::string_view path) {
  auto idx = load_path_index(index_dir(store, graph, PathIndexer::kName));
  std::string key(path);
  auto it = std::lower_bound(idx.entries.begin(), idx.entries.end(), key,
                             [](const auto& e, const std::string& k) { return e.first < k; });
  if (it != idx.entries.end() && it->first == key) return it->second;
  if (!idx.head) return std::nullopt;
  // Directory paths are not listed; resolve them through the indexed tree.
  auto [b, e] = subtree_range(idx.entries, key);
  if (!key.empty() && b == e) return std::nullopt;
  ObjectId cur = load_commit(store, *idx.head).tree;
  std::string_view rest(key);
  while (!rest.empty()) {
    auto slash = rest.find('/');
    auto name = rest.substr(0, slash);
    const auto* entry = load_tree(store, cur).find(name);
    if (!entry) return std::nullopt;
    cur = entry->id;
    rest = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash + 1);
  }
  return cur;
}

bool index_is_stale(const Store& store, std::string_view graph, std::string_view indexer) {
  return fs::exists(index_dir(store, graph, indexer) / "stale");
}

void notify_commit(Store& store, std::string_view graph, const HeadRecord& record) {
  for (const auto& name : store.indexers().names()) {
    auto dir = index_dir(store, graph, name);
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) continue;
    auto* indexer = store.indexers().find(name);
    try {
      auto lock = FileLock::acquire(fs::path(dir.string() + ".lock"), store.holder_id(),
                                    store.config().lock_timeout_secs);
      // Index the newest head so racing notifiers cannot leave an older one.
      ObjectId target = record.commit;
      auto snap = snapshot(store, graph);
      if (snap.commit && snap.seq > record.seq) target = *snap.commit;
      auto old = indexer->indexed_head(dir);
      if (old && *old == std::optional<ObjectId>(target) && !fs::exists(dir / "stale")) continue;
      auto built = build_dir(store, graph, name);
      try {
        if (old)
          indexer->on_commit(store, graph, *old, target, dir, built);
        else
          indexer->rebuild(store, graph, target, built);
        swap_in(built, dir);
      } catch (...) {
        fs::remove_all(built, ec);
        throw;
      }
    } catch (const std::exception& e) {
      try {
        mark_stale(dir, e.what());
      } catch (...) {
      }
    }
  }
}

}  // namespace graphstore
