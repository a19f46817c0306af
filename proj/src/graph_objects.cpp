#include "graphstore/graph_objects.hpp"

#include <algorithm>

#include "file_util.hpp"
#include "graphstore/head_log.hpp"

namespace graphstore {

namespace {

[[noreturn]] void encode_error(const std::string& field, const std::string& reason) {
  throw Error(ErrorCode::EncodeError, field + ": " + reason);
}

// Sequential reader over canonical text; every failure reports its offset.
class Cursor {
 public:
  explicit Cursor(std::string_view s) : s_(s) {}

  bool done() const noexcept { return pos_ == s_.size(); }
  std::size_t pos() const noexcept { return pos_; }
  std::string_view rest() const noexcept { return s_.substr(pos_); }

  [[noreturn]] void fail(const std::string& reason) const { throw ParseFailure(pos_, reason); }

  bool peek_literal(std::string_view lit) const { return rest().substr(0, lit.size()) == lit; }

  void literal(std::string_view lit) {
    if (!peek_literal(lit)) fail("expected '" + std::string(lit) + "'");
    pos_ += lit.size();
  }

  // Bytes up to (not including) `delim`, consuming the delimiter.
  std::string_view until(char delim) {
    auto end = s_.find(delim, pos_);
    if (end == std::string_view::npos) fail(std::string("missing delimiter"));
    auto out = s_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  ObjectId id(char delim) {
    auto start = pos_;
    auto hex = until(delim);
    auto id = ObjectId::from_hex(hex);
    if (!id) throw ParseFailure(start, "invalid object id");
    return *id;
  }

  std::uint64_t number(char delim) {
    auto start = pos_;
    auto text = until(delim);
    std::uint64_t v = 0;
    if (!detail::parse_u64(text, v)) throw ParseFailure(start, "invalid decimal");
    return v;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

bool valid_entry_name(std::string_view name) noexcept {
  if (name.empty() || name.size() > 255) return false;
  return name.find_first_of(std::string_view("/\0\n", 3)) == std::string_view::npos;
}

const TreeEntry* TreeObject::find(std::string_view name) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), name,
                             [](const TreeEntry& e, std::string_view n) { return e.name < n; });
  if (it != entries.end() && it->name == name) return &*it;
  return nullptr;
}

Encoded encode_object(const TreeObject& tree) {
  std::string out;
  for (std::size_t i = 0; i < tree.entries.size(); ++i) {
    const auto& e = tree.entries[i];
    std::string field = "entries[" + std::to_string(i) + "]";
    if (e.kind != ObjectKind::blob && e.kind != ObjectKind::tree)
      encode_error(field + ".kind", "must be blob or tree");
    if (!valid_entry_name(e.name)) encode_error(field + ".name", "invalid name");
    if (i > 0) {
      const auto& prev = tree.entries[i - 1].name;
      if (prev == e.name) encode_error(field + ".name", "duplicate name '" + e.name + "'");
      if (e.name < prev) encode_error(field + ".name", "unsorted entries");
    }
    out.append(kind_name(e.kind)).push_back(' ');
    out.append(e.id.hex()).push_back(' ');
    out.append(std::to_string(e.mtime)).push_back(' ');
    out.append(e.name).push_back('\n');
  }
  return {ObjectKind::tree, std::move(out)};
}

Encoded encode_object(const CommitObject& commit) {
  std::string out = "tree " + commit.tree.hex() + "\n";
  for (const auto& p : commit.parents) out += "parent " + p.hex() + "\n";
  out += "time " + std::to_string(commit.time) + "\n\n";
  out += commit.message;
  return {ObjectKind::commit, std::move(out)};
}

Encoded encode_object(const TxnRecord& txn) {
  if (txn.updates.empty()) encode_error("updates", "at least one update required");
  std::string out;
  for (std::size_t i = 0; i < txn.updates.size(); ++i) {
    const auto& u = txn.updates[i];
    std::string field = "updates[" + std::to_string(i) + "]";
    if (!valid_graph_name(u.graph)) encode_error(field + ".graph", "invalid graph name");
    if (i > 0) {
      const auto& prev = txn.updates[i - 1].graph;
      if (prev == u.graph) encode_error(field + ".graph", "duplicate graph '" + u.graph + "'");
      if (u.graph < prev) encode_error(field + ".graph", "unsorted updates");
    }
    out += "graph " + u.graph + " " + std::to_string(u.expected_old_seq) + " " + u.commit.hex() + "\n";
  }
  out += "time " + std::to_string(txn.time) + "\n";
  return {ObjectKind::txn, std::move(out)};
}

Encoded encode_object(const GraphObject& obj) {
  return std::visit([](const auto& o) { return encode_object(o); }, obj);
}

TreeObject decode_tree(std::string_view content) {
  TreeObject tree;
  Cursor c(content);
  while (!c.done()) {
    auto start = c.pos();
    TreeEntry e;
    if (c.peek_literal("blob ")) {
      c.literal("blob ");
      e.kind = ObjectKind::blob;
    } else if (c.peek_literal("tree ")) {
      c.literal("tree ");
      e.kind = ObjectKind::tree;
    } else {
      c.fail("expected entry kind");
    }
    e.id = c.id(' ');
    e.mtime = c.number(' ');
    auto name_at = c.pos();
    e.name = std::string(c.until('\n'));
    if (!valid_entry_name(e.name)) throw ParseFailure(name_at, "invalid entry name");
    if (!tree.entries.empty()) {
      const auto& prev = tree.entries.back().name;
      if (prev == e.name) throw ParseFailure(start, "duplicate entry name");
      if (e.name < prev) throw ParseFailure(start, "entries not sorted");
    }
    tree.entries.push_back(std::move(e));
  }
  return tree;
}

CommitObject decode_commit(std::string_view content) {
  CommitObject commit;
  Cursor c(content);
  c.literal("tree ");
  commit.tree = c.id('\n');
  while (c.peek_literal("parent ")) {
    c.literal("parent ");
    commit.parents.push_back(c.id('\n'));
  }
  c.literal("time ");
  commit.time = c.number('\n');
  c.literal("\n");
  commit.message = std::string(c.rest());
  return commit;
}

TxnRecord decode_txn(std::string_view content) {
  TxnRecord txn;
  Cursor c(content);
  while (c.peek_literal("graph ")) {
    auto start = c.pos();
    c.literal("graph ");
    TxnUpdate u;
    u.graph = std::string(c.until(' '));
    if (!valid_graph_name(u.graph)) throw ParseFailure(start, "invalid graph name");
    u.expected_old_seq = c.number(' ');
    u.commit = c.id('\n');
    if (!txn.updates.empty()) {
      const auto& prev = txn.updates.back().graph;
      if (prev == u.graph) throw ParseFailure(start, "duplicate graph");
      if (u.graph < prev) throw ParseFailure(start, "updates not sorted");
    }
    txn.updates.push_back(std::move(u));
  }
  if (txn.updates.empty()) c.fail("expected at least one graph update");
  c.literal("time ");
  txn.time = c.number('\n');
  if (!c.done()) c.fail("trailing bytes");
  return txn;
}

GraphObject decode_object(ObjectKind kind, std::string_view content) {
  switch (kind) {
    case ObjectKind::tree: return decode_tree(content);
    case ObjectKind::commit: return decode_commit(content);
    case ObjectKind::txn: return decode_txn(content);
    case ObjectKind::blob: break;
  }
  throw ParseFailure(0, "blob has no structured form");
}

namespace {

StoredObject load_kind(const Store& store, const ObjectId& id, ObjectKind want) {
  auto obj = store.get(id);
  if (obj.kind != want)
    throw Error(ErrorCode::CorruptObject, "object " + id.hex() + " is a " +
                                              std::string(kind_name(obj.kind)) + ", expected " +
                                              std::string(kind_name(want)));
  return obj;
}

}  // namespace

TreeObject load_tree(const Store& store, const ObjectId& id) {
  return decode_tree(load_kind(store, id, ObjectKind::tree).content);
}

CommitObject load_commit(const Store& store, const ObjectId& id) {
  return decode_commit(load_kind(store, id, ObjectKind::commit).content);
}

TxnRecord load_txn(const Store& store, const ObjectId& id) {
  return decode_txn(load_kind(store, id, ObjectKind::txn).content);
}

ClosureResult closure(const Store& store, const std::vector<ObjectId>& roots,
                      const ClosureOptions& opts) {
  ClosureResult out;
  IdSet seen;
  struct Frame {
    ObjectId id;
    bool expanded;
  };
  std::vector<Frame> stack;
  for (auto it = roots.rbegin(); it != roots.rend(); ++it) stack.push_back({*it, false});

  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.expanded) {
      out.post_order.push_back(top.id);
      stack.pop_back();
      continue;
    }
    const ObjectId id = top.id;
    if (!seen.insert(id).second) {
      stack.pop_back();
      continue;
    }
    auto bytes = detail::read_file_if_exists(store.locate(id).path);
    if (!bytes) {
      out.missing.insert(id);
      stack.pop_back();
      continue;
    }
    std::vector<ObjectId> children;
    try {
      if (opts.verify_hashes && ObjectId::hash(*bytes) != id)
        throw Error(ErrorCode::CorruptObject, "hash mismatch");
      auto obj = parse_canonical(*bytes);
      switch (obj.kind) {
        case ObjectKind::blob: break;
        case ObjectKind::tree:
          for (const auto& e : decode_tree(obj.content).entries) children.push_back(e.id);
          break;
        case ObjectKind::commit: {
          auto c = decode_commit(obj.content);
          children.push_back(c.tree);
          if (opts.follow_parents)
            children.insert(children.end(), c.parents.begin(), c.parents.end());
          break;
        }
        case ObjectKind::txn:
          for (const auto& u : decode_txn(obj.content).updates) children.push_back(u.commit);
          break;
      }
    } catch (const Error&) {
      out.corrupt.insert(id);
      stack.pop_back();
      continue;
    }
    out.reachable.insert(id);
    top.expanded = true;
    for (auto it = children.rbegin(); it != children.rend(); ++it)
      if (!seen.count(*it)) stack.push_back({*it, false});
  }
  return out;
}

}  // namespace graphstore
