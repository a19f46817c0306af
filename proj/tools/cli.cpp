#include "cli.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "graphstore/gc.hpp"
#include "graphstore/indexers.hpp"
#include "graphstore/integrity.hpp"
#include "graphstore/sync.hpp"
#include "graphstore/transactions.hpp"

namespace graphstore::cli {

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::SessionError: return kIoError;
    case ErrorCode::CorruptObject:
    case ErrorCode::CorruptHead:
    case ErrorCode::ParseError:
    case ErrorCode::ObjectRejected: return kCorruption;
    case ErrorCode::InvalidArgument: return kUsage;
    default: return kDomainError;
  }
}

std::string read_stdin() {
  std::string data;
  char buf[1 << 16];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, stdin)) > 0) data.append(buf, n);
  return data;
}

ObjectId user_id(const std::string& hex) {
  auto id = ObjectId::from_hex(hex);
  if (!id) throw Error(ErrorCode::InvalidArgument, "'" + hex + "' is not a 64-char lowercase hex id");
  return *id;
}

ObjectKind user_kind(const std::string& name) {
  auto k = kind_from_name(name);
  if (!k) throw Error(ErrorCode::InvalidArgument, "unknown kind '" + name + "'");
  return *k;
}

std::uint64_t file_mtime(const fs::path& p) {
  struct stat st{};
  if (::lstat(p.c_str(), &st) != 0 || st.st_mtim.tv_sec < 0) return 0;
  return static_cast<std::uint64_t>(st.st_mtim.tv_sec);
}

ObjectId import_dir(Store& store, const fs::path& dir) {
  TreeObject tree;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto name = e.path().filename().string();
    auto status = e.symlink_status();
    TreeEntry entry;
    entry.name = name;
    entry.mtime = file_mtime(e.path());
    if (fs::is_directory(status)) {
      entry.kind = ObjectKind::tree;
      entry.id = import_dir(store, e.path());
    } else if (fs::is_regular_file(status)) {
      entry.kind = ObjectKind::blob;
      std::ifstream in(e.path(), std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      entry.id = store.put(ObjectKind::blob, ss.str()).id;
    } else {
      std::cerr << "skipping " << e.path().string() << " (not a regular file or directory)\n";
      continue;
    }
    tree.entries.push_back(std::move(entry));
  }
  std::sort(tree.entries.begin(), tree.entries.end(),
            [](const TreeEntry& a, const TreeEntry& b) { return a.name < b.name; });
  return put_object(store, tree).id;
}

void export_dir(const Store& store, const ObjectId& tree_id, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& e : load_tree(store, tree_id).entries) {
    auto path = dir / e.name;
    if (e.kind == ObjectKind::tree) {
      export_dir(store, e.id, path);
    } else {
      auto obj = store.get(e.id);
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(obj.content.data(), static_cast<std::streamsize>(obj.content.size()));
      if (!out) throw Error(ErrorCode::IoError, "write " + path.string());
    }
    struct timespec times[2] = {{static_cast<time_t>(e.mtime), 0}, {static_cast<time_t>(e.mtime), 0}};
    ::utimensat(AT_FDCWD, path.c_str(), times, AT_SYMLINK_NOFOLLOW);
  }
}

void print_record(const HeadRecord& r) { std::cout << r.seq << ' ' << r.commit.hex() << '\n'; }

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Content-addressed versioned graph store"};
  app.require_subcommand(1);
  std::string store_path;
  if (const char* env = std::getenv("GRAPHSTORE_ROOT")) store_path = env;
  app.add_option("--store", store_path, "Store root (default: $GRAPHSTORE_ROOT)");

  auto open_store = [&]() {
    if (store_path.empty()) throw Error(ErrorCode::InvalidArgument, "no store: pass --store or set GRAPHSTORE_ROOT");
    return Store::open(store_path);
  };
  // Writers complete interrupted transactions first.
  auto open_for_write = [&]() {
    auto s = open_store();
    recover_pending(s);
    return s;
  };

  std::function<int()> action;

  // init
  auto* init = app.add_subcommand("init", "Create a new store");
  std::string durability = "full";
  double lock_timeout = 60, gc_grace = 3600;
  init->add_option("--durability", durability, "full | head | none")->check(CLI::IsMember({"full", "head", "none"}));
  init->add_option("--lock-timeout", lock_timeout, "Seconds before a lock is considered stale");
  init->add_option("--gc-grace", gc_grace, "Minimum age in seconds of collectable objects");
  init->callback([&] {
    action = [&] {
      if (store_path.empty()) throw Error(ErrorCode::InvalidArgument, "no store: pass --store or set GRAPHSTORE_ROOT");
      StoreConfig cfg{*durability_from_name(durability), lock_timeout, gc_grace};
      Store::init(store_path, cfg);
      return kOk;
    };
  });

  // hash-object
  auto* hash = app.add_subcommand("hash-object", "Hash stdin as an object of the given kind");
  std::string kind_arg;
  bool write_obj = false;
  hash->add_option("kind", kind_arg, "blob | tree | commit | txn")->required();
  hash->add_flag("-w,--write", write_obj, "Store the object");
  hash->callback([&] {
    action = [&] {
      auto kind = user_kind(kind_arg);
      auto content = read_stdin();
      if (kind != ObjectKind::blob) decode_object(kind, content);
      ObjectId id = write_obj ? open_store().put(kind, content).id : compute_id(kind, content);
      std::cout << id.hex() << '\n';
      return kOk;
    };
  });

  // cat-object
  auto* cat = app.add_subcommand("cat-object", "Print an object's content");
  std::string id_arg;
  bool show_kind = false, verify_read = false;
  cat->add_option("id", id_arg)->required();
  cat->add_flag("--kind", show_kind, "Print the kind instead of the content");
  cat->add_flag("--verify", verify_read, "Re-hash while reading");
  cat->callback([&] {
    action = [&] {
      auto store = open_store();
      store.set_verify_on_read(verify_read);
      auto obj = store.get(user_id(id_arg));
      if (show_kind)
        std::cout << kind_name(obj.kind) << '\n';
      else
        std::cout.write(obj.content.data(), static_cast<std::streamsize>(obj.content.size()));
      return kOk;
    };
  });

  // object-path
  auto* opath = app.add_subcommand("object-path", "Print the file holding an object");
  opath->add_option("id", id_arg)->required();
  opath->callback([&] {
    action = [&] {
      auto loc = open_store().locate(user_id(id_arg));
      std::cout << loc.path.string() << '\n';
      if (!loc.exists) throw Error(ErrorCode::NotFound, "object " + id_arg);
      return kOk;
    };
  });

  // write-tree / export-tree
  auto* wtree = app.add_subcommand("write-tree", "Import a directory recursively and print its tree id");
  std::string dir_arg;
  wtree->add_option("dir", dir_arg)->required()->check(CLI::ExistingDirectory);
  wtree->callback([&] {
    action = [&] {
      auto store = open_store();
      std::cout << import_dir(store, dir_arg).hex() << '\n';
      return kOk;
    };
  });
  auto* etree = app.add_subcommand("export-tree", "Write a tree out as a directory");
  etree->add_option("id", id_arg)->required();
  etree->add_option("dir", dir_arg)->required();
  etree->callback([&] {
    action = [&] {
      export_dir(open_store(), user_id(id_arg), dir_arg);
      return kOk;
    };
  });

  // graph create|list
  auto* graph = app.add_subcommand("graph", "Manage named graphs");
  graph->require_subcommand(1);
  std::string graph_arg;
  auto* gcreate = graph->add_subcommand("create", "Create an empty graph");
  gcreate->add_option("name", graph_arg)->required();
  gcreate->callback([&] {
    action = [&] {
      auto store = open_store();
      create_graph(store, graph_arg);
      return kOk;
    };
  });
  auto* glist = graph->add_subcommand("list", "List graphs");
  glist->callback([&] {
    action = [&] {
      for (const auto& g : list_graphs(open_store())) std::cout << g << '\n';
      return kOk;
    };
  });

  // commit
  auto* com = app.add_subcommand("commit", "Commit a tree as the next version of a graph");
  std::string tree_arg, message;
  std::optional<std::uint64_t> expect_seq;
  std::optional<std::uint64_t> time_arg;
  com->add_option("graph", graph_arg)->required();
  com->add_option("--tree", tree_arg)->required();
  com->add_option("-m,--message", message)->required();
  com->add_option("--expect-seq", expect_seq, "Fail with StaleHead unless the head is at this seq");
  com->add_option("--time", time_arg, "Commit time (unix seconds, default now)");
  com->callback([&] {
    action = [&] {
      auto store = open_for_write();
      auto snap = snapshot(store, graph_arg);
      if (expect_seq && *expect_seq != snap.seq) {
        // The parent must be the commit at the expected seq, not the current head.
        auto at = read_history(store, open_graph(store, graph_arg), *expect_seq, *expect_seq);
        snap.seq = *expect_seq;
        snap.commit = at.empty() ? std::nullopt : std::optional<ObjectId>(at.front().commit);
      }
      auto res = commit(store, {{graph_arg, snap, user_id(tree_arg), message}},
                        time_arg.value_or(static_cast<std::uint64_t>(std::time(nullptr))));
      print_record(res.front().record);
      return kOk;
    };
  });

  // commit-multi
  auto* cmulti = app.add_subcommand("commit-multi",
                                    "Atomically commit several graphs; stdin lines: <graph> <tree-id> <expect-seq|-> <message>");
  cmulti->add_option("--time", time_arg);
  cmulti->callback([&] {
    action = [&] {
      auto store = open_for_write();
      std::vector<CommitUpdate> updates;
      std::istringstream in(read_stdin());
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string g, t, seq;
        if (!(ls >> g >> t >> seq)) throw Error(ErrorCode::InvalidArgument, "malformed update line '" + line + "'");
        std::string msg;
        std::getline(ls >> std::ws, msg);
        auto snap = snapshot(store, g);
        if (seq != "-") {
          std::uint64_t want = 0;
          try {
            want = std::stoull(seq);
          } catch (...) {
            throw Error(ErrorCode::InvalidArgument, "bad expected seq '" + seq + "'");
          }
          if (want != snap.seq) {
            auto at = read_history(store, open_graph(store, g), want, want);
            snap.seq = want;
            snap.commit = at.empty() ? std::nullopt : std::optional<ObjectId>(at.front().commit);
          }
        }
        updates.push_back({g, snap, user_id(t), msg});
      }
      auto res = commit(store, updates, time_arg.value_or(static_cast<std::uint64_t>(std::time(nullptr))));
      for (const auto& r : res) std::cout << r.graph << ' ' << r.record.seq << ' ' << r.record.commit.hex() << '\n';
      return kOk;
    };
  });

  // log
  auto* logc = app.add_subcommand("log", "Print a graph's head records");
  logc->add_option("graph", graph_arg)->required();
  logc->callback([&] {
    action = [&] {
      auto store = open_store();
      for (const auto& r : read_history(store, open_graph(store, graph_arg))) print_record(r);
      return kOk;
    };
  });

  // rewind
  auto* rw = app.add_subcommand("rewind", "Append a record restoring the commit at seq");
  std::uint64_t seq_arg = 0;
  rw->add_option("graph", graph_arg)->required();
  rw->add_option("seq", seq_arg)->required();
  rw->callback([&] {
    action = [&] {
      auto store = open_for_write();
      auto g = open_graph(store, graph_arg);
      auto rec = with_lock(store, g.name, [&] { return rewind(store, g, seq_arg); });
      notify_commit(store, g.name, rec);
      print_record(rec);
      return kOk;
    };
  });

  // prune
  auto* pr = app.add_subcommand("prune", "Drop all but the newest records of a graph");
  std::size_t keep = 0;
  pr->add_option("graph", graph_arg)->required();
  pr->add_option("--keep", keep)->required()->check(CLI::PositiveNumber);
  pr->callback([&] {
    action = [&] {
      auto store = open_for_write();
      auto g = open_graph(store, graph_arg);
      auto res = with_lock(store, g.name, [&] { return prune(store, g, keep); });
      std::cout << "base " << res.base << "\nkept " << res.kept << "\nremoved " << res.removed << '\n';
      return kOk;
    };
  });

  // gc
  auto* gcc = app.add_subcommand("gc", "Delete unreachable objects");
  std::optional<double> grace;
  bool dry_run = false;
  gcc->add_option("--grace", grace, "Seconds (default from config)");
  gcc->add_flag("--dry-run", dry_run);
  gcc->callback([&] {
    action = [&] {
      auto store = open_store();
      auto r = collect(store, grace.value_or(store.config().gc_grace_secs), dry_run);
      std::cout << "examined " << r.examined << "\ndeleted " << r.deleted << "\nretained_by_grace "
                << r.retained_by_grace << "\nerrors " << r.errors << '\n';
      return r.errors ? kIoError : kOk;
    };
  });

  // fsck
  auto* fk = app.add_subcommand("fsck", "Audit the store");
  bool verify_hashes = false, repair_head = false, json = false;
  fk->add_flag("--verify-hashes", verify_hashes, "Re-hash every object");
  fk->add_flag("--repair-head", repair_head, "Rewind damaged graphs to their last intact version");
  fk->add_flag("--json", json, "Structured output");
  fk->callback([&] {
    action = [&] {
      auto store = open_store();
      auto report = fsck(store, verify_hashes);
      std::cout << (json ? report.to_json() : report.to_text());
      if (repair_head) {
        for (const auto& name : list_graphs(store)) {
          auto snap = snapshot(store, name);
          if (!snap.commit) continue;
          auto intact = find_last_intact(store, name, verify_hashes);
          if (!intact || intact->seq == snap.seq) continue;
          auto g = open_graph(store, name);
          auto rec = with_lock(store, g.name, [&] { return rewind(store, g, intact->seq); });
          std::cerr << "repaired " << name << " -> seq " << intact->seq << " as " << rec.seq << '\n';
        }
      }
      return report.clean() ? kOk : kCorruption;
    };
  });

  // recover
  auto* rec = app.add_subcommand("recover", "Complete interrupted multi-graph commits");
  rec->callback([&] {
    action = [&] {
      auto store = open_store();
      auto r = recover_pending(store);
      std::cout << "markers " << r.markers << "\nrolled_forward " << r.rolled_forward << "\nabandoned "
                << r.abandoned << "\nstale_locks_broken " << r.stale_locks_broken << '\n';
      return kOk;
    };
  });

  // serve / push / pull
  auto* srv = app.add_subcommand("serve", "Serve push/pull sessions");
  std::string addr;
  srv->add_option("--listen", addr, "host:port or unix socket path")->required();
  srv->callback([&] {
    action = [&] {
      auto store = open_for_write();
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      sync::serve(store.root(), addr, g_stop, [](const std::string& bound) {
        std::cout << "listening " << bound << std::endl;
      });
      return kOk;
    };
  });
  auto* psh = app.add_subcommand("push", "Send a graph's history to a peer");
  bool force = false;
  psh->add_option("addr", addr)->required();
  psh->add_option("graph", graph_arg)->required();
  psh->add_flag("--force", force, "Append even when the remote head is not in local history");
  psh->callback([&] {
    action = [&] {
      auto store = open_store();
      auto conn = sync::connect(addr);
      auto r = sync::push(store, *conn, graph_arg, force);
      std::cout << "objects_sent " << r.objects_sent << "\nrecords_appended " << r.records_appended << '\n';
      return kOk;
    };
  });
  auto* pll = app.add_subcommand("pull", "Fetch a graph's history from a peer");
  pll->add_option("addr", addr)->required();
  pll->add_option("graph", graph_arg)->required();
  pll->callback([&] {
    action = [&] {
      auto store = open_for_write();
      auto conn = sync::connect(addr);
      auto r = sync::pull(store, *conn, graph_arg);
      std::cout << "objects_received " << r.objects_sent << "\nrecords_appended " << r.records_appended << '\n';
      return kOk;
    };
  });

  // index build|query
  auto* idx = app.add_subcommand("index", "Build or query per-graph indexes");
  idx->require_subcommand(1);
  std::string indexer_arg, path_arg;
  auto* ib = idx->add_subcommand("build", "Rebuild an index from the latest intact version");
  ib->add_option("graph", graph_arg)->required();
  ib->add_option("indexer", indexer_arg)->required();
  ib->callback([&] {
    action = [&] {
      auto store = open_store();
      std::cout << "entries " << rebuild_index(store, graph_arg, indexer_arg).entries << '\n';
      return kOk;
    };
  });
  auto* iq = idx->add_subcommand("query", "Look a path up in the path index");
  iq->add_option("graph", graph_arg)->required();
  iq->add_option("path", path_arg)->required();
  iq->callback([&] {
    action = [&] {
      auto id = query_path(open_store(), graph_arg, path_arg);
      if (!id) throw Error(ErrorCode::NotFound, "path " + path_arg);
      std::cout << id->hex() << '\n';
      return kOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    return action ? action() : kUsage;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "IoError: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "IoError: " << e.what() << '\n';
    return kIoError;
  }
}

}  // namespace graphstore::cli
