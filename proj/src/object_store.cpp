#include "graphstore/object_store.hpp"

#include <dirent.h>
#include <sys/stat.h>

#include <cerrno>
#include <charconv>
#include <sstream>

#include "file_util.hpp"
#include "graphstore/indexers.hpp"

namespace graphstore {

using detail::UniqueFd;

namespace {

constexpr std::string_view kFormatVersion = "1";
constexpr std::string_view kHashName = "sha256";

std::string format_secs(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

bool parse_secs(std::string_view s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

void make_dir(const fs::path& p) {
  if (::mkdir(p.c_str(), 0755) != 0 && errno != EEXIST) throw_io("mkdir " + p.string(), errno);
}

bool dir_is_empty(const fs::path& p) {
  std::error_code ec;
  auto it = fs::directory_iterator(p, ec);
  if (ec) throw_io("list " + p.string(), ec.value());
  return it == fs::directory_iterator();
}

}  // namespace

std::string_view kind_name(ObjectKind kind) noexcept {
  switch (kind) {
    case ObjectKind::blob: return "blob";
    case ObjectKind::tree: return "tree";
    case ObjectKind::commit: return "commit";
    case ObjectKind::txn: return "txn";
  }
  return "?";
}

std::optional<ObjectKind> kind_from_name(std::string_view name) noexcept {
  if (name == "blob") return ObjectKind::blob;
  if (name == "tree") return ObjectKind::tree;
  if (name == "commit") return ObjectKind::commit;
  if (name == "txn") return ObjectKind::txn;
  return std::nullopt;
}

std::string_view durability_name(Durability d) noexcept {
  switch (d) {
    case Durability::full: return "full";
    case Durability::head: return "head";
    case Durability::none: return "none";
  }
  return "?";
}

std::optional<Durability> durability_from_name(std::string_view name) noexcept {
  if (name == "full") return Durability::full;
  if (name == "head") return Durability::head;
  if (name == "none") return Durability::none;
  return std::nullopt;
}

void StoreConfig::validate() const {
  if (!(lock_timeout_secs > 0)) throw Error(ErrorCode::InvalidArgument, "lock_timeout must be > 0");
  if (!(gc_grace_secs >= 0)) throw Error(ErrorCode::InvalidArgument, "gc_grace must be >= 0");
}

std::string canonical_bytes(ObjectKind kind, std::string_view content) {
  std::string out;
  auto name = kind_name(kind);
  auto len = std::to_string(content.size());
  out.reserve(name.size() + len.size() + 2 + content.size());
  out.append(name).push_back(' ');
  out.append(len).push_back('\n');
  out.append(content);
  return out;
}

ObjectId compute_id(ObjectKind kind, std::string_view content) {
  return ObjectId::hash(canonical_bytes(kind, content));
}

StoredObject parse_canonical(std::string_view bytes) {
  auto sp = bytes.find(' ');
  if (sp == std::string_view::npos || sp > 6)
    throw Error(ErrorCode::CorruptObject, "missing kind in object header");
  auto kind = kind_from_name(bytes.substr(0, sp));
  if (!kind) throw Error(ErrorCode::CorruptObject, "unknown object kind");
  auto nl = bytes.find('\n', sp + 1);
  if (nl == std::string_view::npos || nl - sp - 1 > 20)
    throw Error(ErrorCode::CorruptObject, "missing length in object header");
  std::uint64_t len = 0;
  auto digits = bytes.substr(sp + 1, nl - sp - 1);
  if (!detail::parse_u64(digits, len))
    throw Error(ErrorCode::CorruptObject, "malformed length '" + std::string(digits) + "'");
  auto content = bytes.substr(nl + 1);
  if (content.size() != len)
    throw Error(ErrorCode::CorruptObject, "header says " + std::to_string(len) + " bytes, found " +
                                              std::to_string(content.size()));
  return StoredObject{*kind, std::string(content), ObjectId{}};
}

StoreConfig read_config(const fs::path& root) {
  auto text = detail::read_file_if_exists(root / "config");
  if (!text) throw Error(ErrorCode::NotFound, "no store at " + root.string());
  StoreConfig cfg;
  bool version_ok = false, hash_ok = false;
  std::istringstream in(*text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto key = std::string_view(line).substr(0, eq);
    auto val = std::string_view(line).substr(eq + 1);
    if (key == "format_version") {
      version_ok = val == kFormatVersion;
    } else if (key == "hash") {
      hash_ok = val == kHashName;
    } else if (key == "durability") {
      auto d = durability_from_name(val);
      if (!d) throw Error(ErrorCode::InvalidArgument, "bad durability in config");
      cfg.durability = *d;
    } else if (key == "lock_timeout_secs") {
      if (!parse_secs(val, cfg.lock_timeout_secs))
        throw Error(ErrorCode::InvalidArgument, "bad lock_timeout_secs in config");
    } else if (key == "gc_grace_secs") {
      if (!parse_secs(val, cfg.gc_grace_secs))
        throw Error(ErrorCode::InvalidArgument, "bad gc_grace_secs in config");
    }
  }
  if (!version_ok) throw Error(ErrorCode::InvalidArgument, "unsupported store format_version");
  if (!hash_ok) throw Error(ErrorCode::InvalidArgument, "unsupported store hash");
  cfg.validate();
  return cfg;
}

Store::Store(fs::path root, StoreConfig config)
    : root_(std::move(root)), config_(config), holder_id_(detail::random_hex(16)) {}

Store::Store(Store&&) noexcept = default;
Store& Store::operator=(Store&&) noexcept = default;
Store::~Store() = default;

Store Store::init(const fs::path& root, const StoreConfig& config) {
  config.validate();
  std::error_code ec;
  if (fs::exists(root / "config", ec)) throw Error(ErrorCode::InitConflict, "store already exists at " + root.string());
  if (fs::exists(root, ec)) {
    if (!fs::is_directory(root, ec) || !dir_is_empty(root))
      throw Error(ErrorCode::InitConflict, root.string() + " exists and is not empty");
  } else {
    fs::create_directories(root, ec);
    if (ec) throw_io("create " + root.string(), ec.value());
  }
  Store s(root, config);
  make_dir(s.objects_dir());
  make_dir(s.objects_dir() / "tmp");
  make_dir(s.graphs_dir());
  make_dir(root / "txns");
  make_dir(s.pending_dir());
  make_dir(s.failed_dir());
  make_dir(s.indexes_dir());

  std::string text;
  text += "format_version=" + std::string(kFormatVersion) + "\n";
  text += "hash=" + std::string(kHashName) + "\n";
  text += "durability=" + std::string(durability_name(config.durability)) + "\n";
  text += "lock_timeout_secs=" + format_secs(config.lock_timeout_secs) + "\n";
  text += "gc_grace_secs=" + format_secs(config.gc_grace_secs) + "\n";

  auto tmp = root / "config.tmp";
  {
    UniqueFd fd(::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (!fd) throw_io("create " + tmp.string(), errno);
    detail::write_all_fd(fd.get(), text, tmp);
    if (config.durability != Durability::none) s.flush_fd(fd.get());
  }
  if (::rename(tmp.c_str(), (root / "config").c_str()) != 0) throw_io("rename config", errno);
  if (config.durability != Durability::none) s.flush_dir(root);
  return s;
}

Store Store::open(const fs::path& root) {
  auto cfg = read_config(root);
  return Store(root, cfg);
}

ObjectLocation Store::locate(const ObjectId& id) const {
  auto hex = id.hex();
  auto path = objects_dir() / hex.substr(0, 2) / hex.substr(2);
  return {::access(path.c_str(), F_OK) == 0, path};
}

bool Store::contains(const ObjectId& id) const { return locate(id).exists; }

PutResult Store::put(ObjectKind kind, std::string_view content) {
  auto bytes = canonical_bytes(kind, content);
  auto id = ObjectId::hash(bytes);
  auto loc = locate(id);
  if (loc.exists) {
    // Refresh the age so a concurrent collector's grace window covers the
    // caller's upcoming head append.
    ::utimensat(AT_FDCWD, loc.path.c_str(), nullptr, 0);
    return {id, false};
  }
  const bool full = config_.durability == Durability::full;
  auto tmp = objects_dir() / "tmp" / detail::random_hex(16);
  {
    UniqueFd fd(::open(tmp.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0444));
    if (!fd) throw_io("create " + tmp.string(), errno);
    detail::write_all_fd(fd.get(), bytes, tmp);
    if (full) flush_fd(fd.get());
  }
  auto dir = loc.path.parent_path();
  bool new_dir = ::mkdir(dir.c_str(), 0755) == 0;
  if (!new_dir && errno != EEXIST) {
    int err = errno;
    ::unlink(tmp.c_str());
    throw_io("mkdir " + dir.string(), err);
  }
  bool created = true;
  if (::link(tmp.c_str(), loc.path.c_str()) != 0) {
    int err = errno;
    ::unlink(tmp.c_str());
    if (err != EEXIST) throw_io("link " + loc.path.string(), err);
    created = false;
  } else {
    ::unlink(tmp.c_str());
  }
  if (full && created) {
    flush_dir(dir);
    if (new_dir) flush_dir(objects_dir());
  }
  return {id, created};
}

StoredObject Store::get(const ObjectId& id) const {
  auto loc = locate(id);
  auto bytes = detail::read_file_if_exists(loc.path);
  if (!bytes) throw Error(ErrorCode::NotFound, "object " + id.hex());
  auto obj = parse_canonical(*bytes);
  if (verify_on_read_ && ObjectId::hash(*bytes) != id)
    throw Error(ErrorCode::CorruptObject, "object " + id.hex() + " fails hash verification");
  obj.id = id;
  return obj;
}

VerifyResult Store::verify(const ObjectId& id) const {
  std::optional<std::string> bytes;
  try {
    bytes = detail::read_file_if_exists(locate(id).path);
  } catch (const Error&) {
    return VerifyResult::unreadable;
  }
  if (!bytes) return VerifyResult::unreadable;
  return ObjectId::hash(*bytes) == id ? VerifyResult::ok : VerifyResult::hash_mismatch;
}

void Store::for_each_object(
    const std::function<void(const ObjectId&, const fs::path&)>& fn) const {
  std::error_code ec;
  for (const auto& fan : fs::directory_iterator(objects_dir(), ec)) {
    auto prefix = fan.path().filename().string();
    if (prefix.size() != 2 || !fan.is_directory()) continue;
    std::error_code ec2;
    for (const auto& f : fs::directory_iterator(fan.path(), ec2)) {
      auto id = ObjectId::from_hex(prefix + f.path().filename().string());
      if (id) fn(*id, f.path());
    }
  }
}

bool Store::holds_lock(std::string_view graph) const {
  auto it = held_locks_.find(std::string(graph));
  return it != held_locks_.end() && it->second;
}

void Store::note_lock(std::string_view graph, bool held) {
  if (held)
    held_locks_[std::string(graph)] = true;
  else
    held_locks_.erase(std::string(graph));
}

void Store::flush_fd(int fd, bool data_only) const {
  int rc = data_only ? ::fdatasync(fd) : ::fsync(fd);
  if (rc != 0) throw_io("fsync", errno);
  ++flush_count_;
}

void Store::flush_dir(const fs::path& dir) const {
  UniqueFd fd(::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC));
  if (!fd) throw_io("open " + dir.string(), errno);
  flush_fd(fd.get());
}

IndexRegistry& Store::indexers() {
  if (!indexers_) indexers_ = std::make_unique<IndexRegistry>();
  return *indexers_;
}

}  // namespace graphstore
