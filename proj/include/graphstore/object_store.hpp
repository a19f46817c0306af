#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "graphstore/error.hpp"
#include "graphstore/object_id.hpp"

namespace graphstore {

namespace fs = std::filesystem;

class IndexRegistry;

enum class ObjectKind : std::uint8_t { blob = 1, tree = 2, commit = 3, txn = 4 };

std::string_view kind_name(ObjectKind kind) noexcept;
std::optional<ObjectKind> kind_from_name(std::string_view name) noexcept;

// full: objects, head appends and txn markers are flushed before success.
// head: only head appends and txn markers are flushed.
// none: nothing is flushed; a crash may lose recent writes but never tears them.
enum class Durability { full, head, none };

std::string_view durability_name(Durability d) noexcept;
std::optional<Durability> durability_from_name(std::string_view name) noexcept;

struct StoreConfig {
  Durability durability = Durability::full;
  double lock_timeout_secs = 60.0;
  double gc_grace_secs = 3600.0;

  void validate() const;
};

struct StoredObject {
  ObjectKind kind;
  std::string content;
  ObjectId id;
};

struct PutResult {
  ObjectId id;
  bool created;
};

struct ObjectLocation {
  bool exists;
  fs::path path;
};

enum class VerifyResult { ok, hash_mismatch, unreadable };

/// `<kind> <len>\n<content>`, the exact bytes an ObjectId is computed over.
std::string canonical_bytes(ObjectKind kind, std::string_view content);
ObjectId compute_id(ObjectKind kind, std::string_view content);

/// Splits canonical bytes back into kind and content (id left zero). Throws
/// CorruptObject on any deviation from the canonical header grammar.
StoredObject parse_canonical(std::string_view bytes);

/// Handle bound to one store root. Use from one thread at a time; open as many
/// handles as needed, all coordination happens through the filesystem.
class Store {
 public:
  /// Called with a step name at each boundary of multi-step write protocols.
  /// Used by crash tests to kill the process at a precise point.
  using StepObserver = std::function<void(std::string_view step)>;

  static Store init(const fs::path& root, const StoreConfig& config = {});
  static Store open(const fs::path& root);

  Store(Store&&) noexcept;
  Store& operator=(Store&&) noexcept;
  ~Store();

  const fs::path& root() const noexcept { return root_; }
  const StoreConfig& config() const noexcept { return config_; }

  PutResult put(ObjectKind kind, std::string_view content);
  StoredObject get(const ObjectId& id) const;
  ObjectLocation locate(const ObjectId& id) const;
  VerifyResult verify(const ObjectId& id) const;
  bool contains(const ObjectId& id) const;

  /// Visits every object file under the fanout directories. Files whose names
  /// are not valid ids are skipped.
  void for_each_object(const std::function<void(const ObjectId&, const fs::path&)>& fn) const;

  bool verify_on_read() const noexcept { return verify_on_read_; }
  void set_verify_on_read(bool on) noexcept { verify_on_read_ = on; }

  fs::path objects_dir() const { return root_ / "objects"; }
  fs::path graphs_dir() const { return root_ / "graphs"; }
  fs::path pending_dir() const { return root_ / "txns" / "pending"; }
  fs::path failed_dir() const { return root_ / "txns" / "failed"; }
  fs::path indexes_dir() const { return root_ / "indexes"; }

  /// Random per-handle identity written into lock files this handle creates.
  const std::string& holder_id() const noexcept { return holder_id_; }
  bool holds_lock(std::string_view graph) const;
  void note_lock(std::string_view graph, bool held);

  void set_step_observer(StepObserver obs) { step_observer_ = std::move(obs); }
  void step(std::string_view name) const {
    if (step_observer_) step_observer_(name);
  }

  /// Number of fsync/fdatasync barriers this handle has issued.
  std::uint64_t flush_count() const noexcept { return flush_count_; }
  void flush_fd(int fd, bool data_only = false) const;
  void flush_dir(const fs::path& dir) const;

  IndexRegistry& indexers();

 private:
  Store(fs::path root, StoreConfig config);

  fs::path root_;
  StoreConfig config_;
  bool verify_on_read_ = false;
  std::string holder_id_;
  std::unordered_map<std::string, bool> held_locks_;
  StepObserver step_observer_;
  mutable std::uint64_t flush_count_ = 0;
  std::unique_ptr<IndexRegistry> indexers_;
};

/// Reads `<root>/config`.
StoreConfig read_config(const fs::path& root);

}  // namespace graphstore
