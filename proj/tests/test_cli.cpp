#include <doctest.h>

#include <sstream>

#include "support/oracle.hpp"
#include "support/test_support.hpp"

using testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int status;
  std::string out;
  std::string err;
  std::string first_err_token() const { return err.substr(0, err.find_first_of(": \n")); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

class Cli {
 public:
  explicit Cli(const TempDir& tmp, const std::string& store = "store") : tmp_(tmp), store_(tmp / store) {}

  Result run(const std::vector<std::string>& args, const std::string& input = "") const {
    std::ofstream(tmp_ / "stdin", std::ios::binary) << input;
    std::string cmd = quote(GS_CLI_PATH) + " --store " + quote(store_.string());
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " <" + quote((tmp_ / "stdin").string()) + " >" + quote((tmp_ / "stdout").string()) + " 2>" +
           quote((tmp_ / "stderr").string());
    int rc = std::system(cmd.c_str());
    return {WEXITSTATUS(rc), slurp(tmp_ / "stdout"), slurp(tmp_ / "stderr")};
  }
  const fs::path& store() const { return store_; }

 private:
  const TempDir& tmp_;
  fs::path store_;
};

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace

TEST_CASE("hash-object matches an independent hash") {
  TempDir tmp;
  Cli cli(tmp);
  REQUIRE(cli.run({"init", "--durability", "none"}).status == 0);
  auto r = cli.run({"hash-object", "blob"}, "");
  CHECK(r.status == 0);
  CHECK(trim(r.out) == oracle::sha256_hex(std::string("blob 0\n")));
  CHECK(oracle::object_ids(cli.store()).empty());  // not written without -w

  auto w = cli.run({"hash-object", "blob", "-w"}, "hello");
  CHECK(trim(w.out) == oracle::sha256_hex("blob 5\nhello"));
  CHECK(oracle::object_ids(cli.store()).count(trim(w.out)));
  auto cat = cli.run({"cat-object", trim(w.out)});
  CHECK(cat.out == "hello");
  CHECK(trim(cli.run({"cat-object", "--kind", trim(w.out)}).out) == "blob");
  auto path = cli.run({"object-path", trim(w.out)});
  CHECK(fs::exists(trim(path.out)));
}

TEST_CASE("exit codes and error tokens") {
  TempDir tmp;
  Cli cli(tmp);
  REQUIRE(cli.run({"init", "--durability", "none"}).status == 0);

  auto again = cli.run({"init"});
  CHECK(again.status == 1);
  CHECK(again.first_err_token() == "InitConflict");

  auto usage = cli.run({"no-such-command"});
  CHECK(usage.status == 2);
  auto bad_id = cli.run({"cat-object", "xyz"});
  CHECK(bad_id.status == 2);
  CHECK(bad_id.first_err_token() == "InvalidArgument");
  auto bad_kind = cli.run({"hash-object", "widget"}, "x");
  CHECK(bad_kind.status == 2);
  auto bad_tree = cli.run({"hash-object", "tree"}, "not a tree line\n");
  CHECK(bad_tree.status == 3);
  CHECK(bad_tree.first_err_token() == "ParseError");

  auto missing = cli.run({"cat-object", std::string(64, 'a')});
  CHECK(missing.status == 1);
  CHECK(missing.first_err_token() == "NotFound");

  auto bad_graph = cli.run({"graph", "create", "a/b"});
  CHECK(bad_graph.status == 1);
  CHECK(bad_graph.first_err_token() == "InvalidName");

  auto no_store = Cli(tmp, "absent").run({"log", "main"});
  CHECK(no_store.status == 1);
  CHECK(no_store.first_err_token() == "NotFound");
}

TEST_CASE("commit, log, stale head, rewind and prune") {
  TempDir tmp;
  Cli cli(tmp);
  REQUIRE(cli.run({"init", "--durability", "none"}).status == 0);
  fs::create_directories(tmp / "work" / "d");
  std::ofstream(tmp / "work" / "a") << "A";
  std::ofstream(tmp / "work" / "d" / "b") << "B";
  auto tree = trim(cli.run({"write-tree", (tmp / "work").string()}).out);
  REQUIRE(tree.size() == 64);

  CHECK(cli.run({"graph", "create", "main"}).status == 0);
  CHECK(cli.run({"graph", "create", "main"}).first_err_token() == "GraphExists");
  auto c1 = cli.run({"commit", "main", "--tree", tree, "-m", "one", "--time", "5"});
  REQUIRE(c1.status == 0);
  std::istringstream c1s(c1.out);
  std::string seq, commit;
  c1s >> seq >> commit;
  CHECK(seq == "1");

  auto stale = cli.run({"commit", "main", "--tree", tree, "-m", "two", "--expect-seq", "0"});
  CHECK(stale.status == 1);
  CHECK(stale.first_err_token() == "StaleHead");
  CHECK(cli.run({"commit", "main", "--tree", tree, "-m", "two", "--expect-seq", "1"}).status == 0);

  auto log = cli.run({"log", "main"});
  auto recs = oracle::head_records(cli.store(), "main");
  REQUIRE(recs.size() == 2);
  CHECK(log.out.find(recs[0].second) != std::string::npos);
  CHECK(recs[0].second == commit);

  CHECK(cli.run({"rewind", "main", "9"}).first_err_token() == "BadSeq");
  CHECK(cli.run({"rewind", "main", "1"}).status == 0);
  CHECK(oracle::head_records(cli.store(), "main").back().second == commit);
  auto pr = cli.run({"prune", "main", "--keep", "1"});
  CHECK(pr.status == 0);
  CHECK(pr.out.find("base 3") != std::string::npos);

  CHECK(cli.run({"export-tree", tree, (tmp / "out").string()}).status == 0);
  CHECK(slurp(tmp / "out" / "d" / "b") == "B");

  CHECK(cli.run({"index", "build", "main", "path"}).status == 0);
  auto q = cli.run({"index", "query", "main", "d/b"});
  CHECK(trim(q.out) == oracle::sha256_hex("blob 1\nB"));
  CHECK(cli.run({"index", "query", "main", "zzz"}).status == 1);
}

TEST_CASE("commit-multi, fsck, gc and recover") {
  TempDir tmp;
  Cli cli(tmp);
  REQUIRE(cli.run({"init", "--durability", "none", "--gc-grace", "0"}).status == 0);
  auto blob = trim(cli.run({"hash-object", "blob", "-w"}, "x").out);
  auto tree = trim(cli.run({"hash-object", "tree", "-w"}, "blob " + blob + " 0 x\n").out);
  cli.run({"graph", "create", "a"});
  cli.run({"graph", "create", "b"});
  auto m = cli.run({"commit-multi"}, "a " + tree + " - first\nb " + tree + " 0 second\n");
  CHECK(m.status == 0);
  CHECK(oracle::head_records(cli.store(), "a").size() == 1);
  CHECK(oracle::head_records(cli.store(), "b").size() == 1);

  auto f = cli.run({"fsck", "--verify-hashes"});
  CHECK(f.status == 0);
  // the completed txn record is referenced by nothing: an orphan, not a defect
  CHECK(f.out.rfind("orphan ", 0) == 0);
  CHECK(std::count(f.out.begin(), f.out.end(), '\n') == 1);
  auto js = cli.run({"fsck", "--json"});
  CHECK(js.out.find("\"corrupt\"") != std::string::npos);

  cli.run({"hash-object", "blob", "-w"}, "orphan");
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  auto g = cli.run({"gc"});
  CHECK(g.status == 0);
  CHECK(g.out.find("deleted 2") != std::string::npos);
  CHECK(oracle::object_ids(cli.store()) == oracle::reachable(cli.store()));

  auto path = fs::path(trim(cli.run({"object-path", blob}).out));
  testing::flip_bit(path, 60);
  auto bad = cli.run({"fsck", "--verify-hashes"});
  CHECK(bad.status == 3);
  CHECK(bad.out.find("corrupt " + blob) != std::string::npos);

  CHECK(cli.run({"recover"}).out.find("markers 0") != std::string::npos);
}

TEST_CASE("push and pull between two stores over a unix socket") {
  TempDir tmp;
  Cli a(tmp);
  REQUIRE(a.run({"init", "--durability", "none"}).status == 0);
  Cli r(tmp, "remote");
  auto remote = r.store();
  REQUIRE(r.run({"init", "--durability", "none"}).status == 0);

  auto tree = trim(a.run({"hash-object", "tree", "-w"}, "").out);
  a.run({"graph", "create", "main"});
  a.run({"commit", "main", "--tree", tree, "-m", "hi"});

  auto sock = (tmp / "sock").string();
  std::string cmd = quote(GS_CLI_PATH) + " --store " + quote(remote.string()) + " serve --listen " + quote(sock) +
                    " >/dev/null 2>&1 & echo $!";
  FILE* p = ::popen(cmd.c_str(), "r");
  int pid = 0;
  REQUIRE(std::fscanf(p, "%d", &pid) == 1);
  ::pclose(p);
  for (int i = 0; i < 200 && !fs::exists(sock); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));

  auto push = a.run({"push", sock, "main"});
  CHECK(push.status == 0);
  CHECK(push.out.find("records_appended 1") != std::string::npos);
  CHECK(oracle::head_records(remote, "main") == oracle::head_records(a.store(), "main"));

  Cli b(tmp, "b");
  auto b_root = b.store();
  b.run({"init", "--durability", "none"});
  auto pull = b.run({"pull", sock, "main"});
  CHECK(pull.status == 0);
  CHECK(oracle::head_records(b_root, "main") == oracle::head_records(a.store(), "main"));

  ::kill(pid, SIGTERM);
  ::waitpid(pid, nullptr, 0);
}
