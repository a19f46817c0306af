#include <doctest.h>

#include <future>
#include <sstream>

#include "graphstore/integrity.hpp"
#include "graphstore/sync.hpp"
#include "support/oracle.hpp"
#include "support/sync_harness.hpp"
#include "support/test_support.hpp"

using namespace graphstore;
using namespace graphstore::sync;
using testing::TempDir;

namespace {

std::string to_hex(std::string_view bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : bytes) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

std::map<std::string, std::string> golden() {
  std::ifstream in(std::string(GS_TEST_DATA_DIR) + "/golden_frames.txt");
  std::map<std::string, std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, hex;
    ls >> name >> hex;
    out[name] = hex;
  }
  return out;
}

ObjectId filled(char c) { return ObjectId::from_raw(std::string(32, c)); }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

// Two stores with one shared graph.
struct Pair {
  TempDir tmp;
  fs::path local_root = tmp / "local";
  fs::path remote_root = tmp / "remote";
  Store local = Store::init(local_root, testing::fast_config());
  Store remote = Store::init(remote_root, testing::fast_config());
  std::mt19937_64 rng{41};

  HeadRecord grow(Store& s, const std::string& g, int files = 4) {
    if (!graph_exists(s, g)) create_graph(s, g);
    return testing::commit_tree(s, g, testing::random_tree(s, rng, files, 200));
  }
  PushReport push_graph(const std::string& g, bool force = false) {
    testing::LoopbackPeer peer(remote_root);
    auto rep = push(local, peer.client(), g, force);
    peer.finish();
    return rep;
  }
  PushReport pull_graph(const std::string& g) {
    testing::LoopbackPeer peer(remote_root);
    auto rep = pull(local, peer.client(), g);
    peer.finish();
    return rep;
  }
  std::vector<std::string> commits(const fs::path& root, const std::string& g) {
    std::vector<std::string> out;
    for (auto& [seq, hex] : oracle::head_records(root, g)) out.push_back(hex);
    return out;
  }
};

// Version closures of every record of the graph, per the oracle.
std::set<std::string> history_closure(const fs::path& root, const std::string& g) {
  std::vector<std::string> roots;
  for (auto& [seq, hex] : oracle::head_records(root, g)) roots.push_back(hex);
  return oracle::closure(root, roots, false);
}

std::size_t missing_count(const fs::path& from, const fs::path& to, const std::string& g) {
  auto have = oracle::object_ids(to);
  std::size_t n = 0;
  for (const auto& id : history_closure(from, g)) n += have.count(id) == 0;
  return n;
}

}  // namespace

TEST_CASE("frames match the golden vectors") {
  auto g = golden();
  REQUIRE(g.size() == 10);
  CHECK(to_hex(encode_frame(encode(Hello{}))) == g["hello"]);
  CHECK(to_hex(encode_frame(encode(RefReq{"main"}))) == g["ref_req"]);
  CHECK(to_hex(encode_frame(encode(RefAdvert{"g", 5, std::nullopt}))) == g["ref_advert_empty"]);
  CHECK(to_hex(encode_frame(encode(RefAdvert{"g", 5, filled(0x11)}))) == g["ref_advert_a"]);
  CHECK(to_hex(encode_frame(encode(WantCheck{{filled(0x11), filled(0x22)}}))) == g["want_check"]);
  CHECK(to_hex(encode_frame(encode(Missing{{true, false, true, false, false, false, false, false, true}}))) ==
        g["missing"]);
  CHECK(to_hex(encode_frame(encode(ObjectMsg{ObjectKind::blob, "hi"}))) == g["object"]);
  CHECK(to_hex(encode_frame(encode(HeadUpdate{"g", std::nullopt, {{1, filled(0x11)}}}))) == g["head_update"]);
  CHECK(to_hex(encode_frame(encode_ok())) == g["ok"]);
  CHECK(to_hex(encode_frame(encode(ErrorMsg{WireError::stale_remote, "x"}))) == g["error"]);
}

TEST_CASE("payload decoders invert the encoders") {
  CHECK(decode_hello(encode(Hello{7}).payload).proto == 7);
  CHECK(decode_ref_req(encode(RefReq{"main"}).payload).graph == "main");
  auto adv = decode_ref_advert(encode(RefAdvert{"g", 9, filled(0x33)}).payload);
  CHECK(adv.seq == 9);
  CHECK(adv.commit == filled(0x33));
  CHECK_FALSE(decode_ref_advert(encode(RefAdvert{"g", 0, std::nullopt}).payload).commit);
  CHECK(decode_want_check(encode(WantCheck{{filled(1), filled(2)}}).payload).ids.size() == 2);
  std::vector<bool> bits{true, false, false, true, true};
  CHECK(decode_missing(encode(Missing{bits}).payload, 5).bits == bits);
  auto obj = decode_object(encode(ObjectMsg{ObjectKind::tree, ""}).payload);
  CHECK(obj.kind == ObjectKind::tree);
  CHECK(obj.content.empty());
  auto upd = decode_head_update(encode(HeadUpdate{"g", filled(5), {{3, filled(6)}, {4, filled(7)}}}).payload);
  CHECK(upd.expected == filled(5));
  CHECK(upd.records == std::vector<HeadRecord>{{3, filled(6)}, {4, filled(7)}});
  auto err = decode_error(encode(ErrorMsg{WireError::protocol, "bad"}).payload);
  CHECK(err.code == WireError::protocol);
  CHECK(err.message == "bad");
}

TEST_CASE("malformed payloads are session errors") {
  CHECK(code_of([] { decode_hello("\x01"); }) == ErrorCode::SessionError);
  CHECK(code_of([] { decode_ref_req(std::string("\x00\x05" "ab", 4)); }) == ErrorCode::SessionError);
  CHECK(code_of([] { decode_want_check(std::string("\x00\x02", 2) + std::string(40, 'x')); }) ==
        ErrorCode::SessionError);
  CHECK(code_of([] { decode_missing("\xff", 9); }) == ErrorCode::SessionError);
  CHECK(code_of([] { decode_object(std::string("\x09", 1)); }) == ErrorCode::SessionError);
  // more than one batch of ids in a single WANT_CHECK
  std::string big("\x01\x01", 2);
  big += std::string(257 * 32, 'a');
  CHECK(code_of([&] { decode_want_check(big); }) == ErrorCode::SessionError);
}

TEST_CASE("negotiation reports exactly the ids the peer lacks") {
  Pair p;
  auto c1 = p.grow(p.local, "main");
  p.push_graph("main");
  auto c2 = p.grow(p.local, "main");

  auto ask = [&](const std::vector<ObjectId>& ids) {
    testing::LoopbackPeer peer(p.remote_root);
    Connection conn(peer.client());
    conn.send(encode(Hello{}));
    conn.expect();
    conn.send(encode(RefReq{"main"}));
    conn.expect();
    return negotiate_missing(conn, ids);
  };
  CHECK(ask({}).empty());
  auto v1 = closure(p.local, {c1.commit}, ClosureOptions{false, false}).post_order;
  CHECK(ask(v1).empty());

  auto v2 = closure(p.local, {c2.commit}, ClosureOptions{false, false}).post_order;
  auto missing = ask(v2);
  auto have = oracle::object_ids(p.remote_root);
  std::vector<ObjectId> expect;
  for (const auto& id : v2)
    if (!have.count(id.hex())) expect.push_back(id);
  CHECK(missing == expect);  // order preserved
  CHECK(!missing.empty());
}

TEST_CASE("push") {
  Pair p;
  SUBCASE("identical stores transfer nothing") {
    p.grow(p.local, "main");
    p.push_graph("main");
    auto rep = p.push_graph("main");
    CHECK(rep.objects_sent == 0);
    CHECK(rep.records_appended == 0);
  }
  SUBCASE("one commit behind sends its exclusive closure") {
    p.grow(p.local, "main");
    p.push_graph("main");
    p.grow(p.local, "main");
    auto expect = missing_count(p.local_root, p.remote_root, "main");
    auto rep = p.push_graph("main");
    CHECK(rep.objects_sent == expect);
    CHECK(rep.records_appended == 1);
    CHECK(p.commits(p.remote_root, "main") == p.commits(p.local_root, "main"));
  }
  SUBCASE("fresh remote receives the whole history") {
    for (int i = 0; i < 5; ++i) p.grow(p.local, "main");
    auto expect = missing_count(p.local_root, p.remote_root, "main");
    auto rep = p.push_graph("main");
    CHECK(rep.objects_sent == expect);
    CHECK(rep.records_appended == 5);
    auto reach = oracle::reachable(p.remote_root);
    for (const auto& id : history_closure(p.local_root, "main")) CHECK(reach.count(id));
    CHECK(fsck(p.remote, true).empty());
  }
  SUBCASE("diverged remote is not fast-forward unless forced") {
    p.grow(p.local, "main");
    p.push_graph("main");
    p.grow(p.remote, "main");
    p.grow(p.local, "main");
    CHECK(code_of([&] { p.push_graph("main"); }) == ErrorCode::NotFastForward);
    auto before = p.commits(p.remote_root, "main");
    auto rep = p.push_graph("main", true);
    CHECK(rep.records_appended == 2);
    auto after = p.commits(p.remote_root, "main");
    CHECK(after.size() == before.size() + 2);  // forced pushes only append
    CHECK(std::equal(before.begin(), before.end(), after.begin()));
    CHECK(after.back() == p.commits(p.local_root, "main").back());
  }
  SUBCASE("remote behind an ancestor not in the local log still fast-forwards") {
    p.grow(p.local, "main");
    p.push_graph("main");
    p.grow(p.local, "main");
    p.grow(p.local, "main");
    with_lock(p.local, "main", [&] { prune(p.local, open_graph(p.local, "main"), 1); });
    auto rep = p.push_graph("main");
    CHECK(rep.records_appended == 1);
    CHECK(p.commits(p.remote_root, "main").back() == p.commits(p.local_root, "main").back());
  }
  SUBCASE("remote renumbers onto its own base") {
    for (int i = 0; i < 4; ++i) p.grow(p.local, "main");
    with_lock(p.local, "main", [&] { prune(p.local, open_graph(p.local, "main"), 2); });
    p.push_graph("main");
    auto recs = oracle::head_records(p.remote_root, "main");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].first == 1);
    CHECK(recs[1].first == 2);
  }
}

TEST_CASE("pull") {
  Pair p;
  SUBCASE("a brand-new graph arrives with its full closure") {
    for (int i = 0; i < 3; ++i) p.grow(p.remote, "data");
    auto expect = missing_count(p.remote_root, p.local_root, "data");
    auto rep = p.pull_graph("data");
    CHECK(rep.objects_sent == expect);
    CHECK(rep.records_appended == 3);
    CHECK(p.commits(p.local_root, "data") == p.commits(p.remote_root, "data"));
    CHECK(fsck(p.local, true).empty());
  }
  SUBCASE("pull from an identical peer transfers nothing") {
    p.grow(p.remote, "data");
    p.pull_graph("data");
    auto rep = p.pull_graph("data");
    CHECK(rep.objects_sent == 0);
    CHECK(rep.records_appended == 0);
  }
  SUBCASE("unknown remote graph") {
    CHECK(code_of([&] { p.pull_graph("nope"); }) == ErrorCode::NotFound);
  }
}

TEST_CASE("interrupted pushes resume without re-sending stored objects") {
  for (int fifth = 1; fifth < 5; ++fifth) {
    Pair p;
    for (int i = 0; i < 4; ++i) p.grow(p.local, "main", 12);
    auto total = missing_count(p.local_root, p.remote_root, "main");

    // bytes a clean push exchanges, measured against a scratch copy
    std::size_t full_bytes = 0;
    {
      auto scratch = p.tmp / "scratch";
      Store::init(scratch, testing::fast_config());
      testing::LoopbackPeer peer(scratch);
      testing::FaultyTransport counting(peer.client(), SIZE_MAX / 2);
      push(p.local, counting, "main", false);
      full_bytes = counting.used();
    }
    auto budget = full_bytes * fifth / 5;

    std::uint64_t accepted = 0;
    {
      testing::LoopbackPeer peer(p.remote_root);
      testing::FaultyTransport faulty(peer.client(), budget);
      CHECK_THROWS_AS(push(p.local, faulty, "main", false), Error);
      CHECK(faulty.tripped());
      accepted += peer.finish().objects_accepted;
    }
    CHECK(fsck(p.remote, true).clean());
    {
      testing::LoopbackPeer peer(p.remote_root);
      auto rep = push(p.local, peer.client(), "main", false);
      accepted += peer.finish().objects_accepted;
      CHECK(rep.records_appended == 4);
    }
    CHECK(accepted == total);
    CHECK(p.commits(p.remote_root, "main") == p.commits(p.local_root, "main"));
  }
}

TEST_CASE("an object corrupted in flight never lands") {
  Pair p;
  p.grow(p.local, "main");

  class Corrupting final : public Transport {
   public:
    explicit Corrupting(Transport& inner) : inner_(inner) {}
    std::size_t read_some(char* b, std::size_t n) override { return inner_.read_some(b, n); }
    void write_all(std::string_view data) override {
      std::string copy(data);
      if (copy.size() > 6 && static_cast<FrameType>(copy[4]) == FrameType::object) copy.back() ^= 1;
      inner_.write_all(copy);
    }
    void close() override { inner_.close(); }

   private:
    Transport& inner_;
  };

  testing::LoopbackPeer peer(p.remote_root);
  Corrupting bad(peer.client());
  CHECK(code_of([&] { push(p.local, bad, "main", false); }) == ErrorCode::ObjectRejected);
  peer.finish();
  auto local_ids = oracle::object_ids(p.local_root);
  for (const auto& id : oracle::object_ids(p.remote_root)) CHECK(local_ids.count(id));
  for (const auto& id : oracle::object_ids(p.remote_root)) {
    oracle::RawObject raw;
    REQUIRE(oracle::read_object(p.remote_root, id, raw));
    CHECK(oracle::sha256_hex(oracle::canonical(raw.kind, raw.content)) == id);
  }
}

TEST_CASE("version mismatch gets an ERROR frame") {
  Pair p;
  testing::LoopbackPeer peer(p.remote_root);
  Connection conn(peer.client());
  conn.send(encode(Hello{99}));
  std::optional<Frame> f;
  do f = conn.receive();
  while (f && f->type == FrameType::hello);
  REQUIRE(f);
  REQUIRE(f->type == FrameType::error);
  CHECK(decode_error(f->payload).code == WireError::version_mismatch);
  CHECK_FALSE(conn.receive());  // server closed cleanly
}

TEST_CASE("garbage frames drop the session and leave the store clean") {
  Pair p;
  p.grow(p.local, "main");
  p.push_graph("main");
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    testing::LoopbackPeer peer(p.remote_root);
    peer.client().write_all(testing::random_bytes(rng, 1 + rng() % 64));
    peer.finish();
  }
  {
    // huge declared length
    testing::LoopbackPeer peer(p.remote_root);
    peer.client().write_all(std::string("\xff\xff\xff\xff\x01", 5));
    peer.finish();
  }
  CHECK(fsck(p.remote, true).empty());
  CHECK(p.push_graph("main").records_appended == 0);
}

TEST_CASE("concurrent pushes of different graphs over a socket server") {
  Pair p;
  auto sock = (p.tmp / "sock").string();
  std::atomic<bool> stop{false};
  std::promise<void> ready;
  std::thread server([&] { serve(p.remote_root, sock, stop, [&](const std::string&) { ready.set_value(); }); });
  ready.get_future().wait();

  std::vector<std::string> graphs{"g0", "g1", "g2", "g3"};
  for (const auto& g : graphs)
    for (int i = 0; i < 3; ++i) p.grow(p.local, g);
  std::vector<std::thread> clients;
  std::atomic<int> ok{0};
  for (const auto& g : graphs)
    clients.emplace_back([&, g] {
      auto s = Store::open(p.local_root);
      auto t = connect(sock);
      if (push(s, *t, g, false).records_appended == 3) ++ok;
    });
  for (auto& t : clients) t.join();
  stop = true;
  server.join();
  CHECK(ok == 4);
  for (const auto& g : graphs) CHECK(p.commits(p.remote_root, g) == p.commits(p.local_root, g));
  CHECK(fsck(p.remote, true).empty());
}
