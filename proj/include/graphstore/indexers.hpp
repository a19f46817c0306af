#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "graphstore/head_log.hpp"

namespace graphstore {

struct IndexStats {
  std::uint64_t entries = 0;
};

/// A per-graph derived index. Output must be a pure function of store content
/// and the indexed head commit; the framework owns directories and swapping.
class Indexer {
 public:
  virtual ~Indexer() = default;

  virtual std::string name() const = 0;

  /// Writes a complete index for `head` (nullopt for an empty graph) into the
  /// empty directory `out`.
  virtual IndexStats rebuild(const Store& store, std::string_view graph,
                             const std::optional<ObjectId>& head, const fs::path& out) = 0;

  /// Writes the index for `new_head` into `out`, given the current index in
  /// `current` which was built for `old_head`. The default rebuilds.
  virtual IndexStats on_commit(const Store& store, std::string_view graph,
                               const std::optional<ObjectId>& old_head, const ObjectId& new_head,
                               const fs::path& current, const fs::path& out) {
    (void)old_head;
    (void)current;
    return rebuild(store, graph, new_head, out);
  }

  /// Head commit the index in `dir` was built for; nullopt when unknown.
  virtual std::optional<std::optional<ObjectId>> indexed_head(const fs::path& dir) const = 0;
};

/// Maps every blob path in the head tree to its id. One file `paths`:
/// `head <commit-hex>\n` then `<id-hex> <path>\n` sorted by path bytes.
class PathIndexer final : public Indexer {
 public:
  static constexpr std::string_view kName = "path";
  static constexpr std::string_view kFile = "paths";

  std::string name() const override { return std::string(kName); }
  IndexStats rebuild(const Store& store, std::string_view graph,
                     const std::optional<ObjectId>& head, const fs::path& out) override;
  IndexStats on_commit(const Store& store, std::string_view graph,
                       const std::optional<ObjectId>& old_head, const ObjectId& new_head,
                       const fs::path& current, const fs::path& out) override;
  std::optional<std::optional<ObjectId>> indexed_head(const fs::path& dir) const override;
};

class IndexRegistry {
 public:
  IndexRegistry();

  void add(std::unique_ptr<Indexer> indexer);
  Indexer* find(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, std::unique_ptr<Indexer>, std::less<>> indexers_;
};

fs::path index_dir(const Store& store, std::string_view graph, std::string_view indexer);

/// Builds the index for the graph's latest intact snapshot aside and swaps it in.
IndexStats rebuild_index(Store& store, std::string_view graph, std::string_view indexer);

/// Looks a "/"-joined path up in the built path index.
std::optional<ObjectId> query_path(const Store& store, std::string_view graph,
                                   std::string_view path);

/// Advances every built index of the graph to the record's commit. Indexer
/// failures mark the index stale and are logged; they never propagate.
void notify_commit(Store& store, std::string_view graph, const HeadRecord& record);

bool index_is_stale(const Store& store, std::string_view graph, std::string_view indexer);

}  // namespace graphstore
