#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "graphstore/object_store.hpp"

namespace graphstore {

struct TreeEntry {
  ObjectKind kind;  // blob or tree
  ObjectId id;
  std::uint64_t mtime = 0;
  std::string name;

  friend bool operator==(const TreeEntry&, const TreeEntry&) = default;
};

struct TreeObject {
  std::vector<TreeEntry> entries;

  const TreeEntry* find(std::string_view name) const;
  friend bool operator==(const TreeObject&, const TreeObject&) = default;
};

struct CommitObject {
  ObjectId tree;
  std::vector<ObjectId> parents;
  std::uint64_t time = 0;
  std::string message;

  friend bool operator==(const CommitObject&, const CommitObject&) = default;
};

struct TxnUpdate {
  std::string graph;
  std::uint64_t expected_old_seq = 0;
  ObjectId commit;

  friend bool operator==(const TxnUpdate&, const TxnUpdate&) = default;
};

struct TxnRecord {
  std::vector<TxnUpdate> updates;
  std::uint64_t time = 0;

  friend bool operator==(const TxnRecord&, const TxnRecord&) = default;
};

using GraphObject = std::variant<TreeObject, CommitObject, TxnRecord>;

struct Encoded {
  ObjectKind kind;
  std::string content;
};

/// Canonical bytes for a structured object. Throws EncodeError naming the
/// offending field when an invariant does not hold.
Encoded encode_object(const TreeObject& tree);
Encoded encode_object(const CommitObject& commit);
Encoded encode_object(const TxnRecord& txn);
Encoded encode_object(const GraphObject& obj);

/// Strict inverse of encode_object: anything that would not re-encode to the
/// same bytes is rejected with a ParseFailure carrying the byte offset.
GraphObject decode_object(ObjectKind kind, std::string_view content);
TreeObject decode_tree(std::string_view content);
CommitObject decode_commit(std::string_view content);
TxnRecord decode_txn(std::string_view content);

/// Tree entry names: non-empty, at most 255 bytes, no '/', NUL or newline.
bool valid_entry_name(std::string_view name) noexcept;

template <typename T>
PutResult put_object(Store& store, const T& obj) {
  auto enc = encode_object(obj);
  return store.put(enc.kind, enc.content);
}

TreeObject load_tree(const Store& store, const ObjectId& id);
CommitObject load_commit(const Store& store, const ObjectId& id);
TxnRecord load_txn(const Store& store, const ObjectId& id);

using IdSet = std::unordered_set<ObjectId>;

struct ClosureOptions {
  // When false a commit contributes only itself and its tree: the closure of
  // one version rather than of its whole ancestry.
  bool follow_parents = true;
  // Re-hash every visited object; mismatching objects go to `corrupt` and are
  // not traversed.
  bool verify_hashes = false;
};

struct ClosureResult {
  IdSet reachable;  // objects present in the store
  IdSet missing;    // referenced but absent
  IdSet corrupt;    // present but unreadable, undecodable or (when verifying) mismatching
  std::vector<ObjectId> post_order;  // reachable ids, children before parents
};

ClosureResult closure(const Store& store, const std::vector<ObjectId>& roots,
                      const ClosureOptions& opts = {});

}  // namespace graphstore
