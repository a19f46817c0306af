#include "oracle.hpp"

#include <sodium.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace oracle {

std::string sha256_hex(const std::string& bytes) {
  unsigned char out[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(out, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  static const char* digits = "0123456789abcdef";
  std::string hex;
  for (unsigned char b : out) {
    hex += digits[b >> 4];
    hex += digits[b & 15];
  }
  return hex;
}

std::string canonical(const std::string& kind, const std::string& content) {
  std::ostringstream s;
  s << kind << ' ' << content.size() << '\n' << content;
  return s.str();
}

static std::string slurp(const fs::path& p, bool& ok) {
  std::ifstream in(p, std::ios::binary);
  ok = static_cast<bool>(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::set<std::string> object_ids(const fs::path& root) {
  std::set<std::string> out;
  for (const auto& fan : fs::directory_iterator(root / "objects")) {
    auto prefix = fan.path().filename().string();
    if (prefix.size() != 2) continue;
    for (const auto& f : fs::directory_iterator(fan.path())) out.insert(prefix + f.path().filename().string());
  }
  return out;
}

bool read_object(const fs::path& root, const std::string& hex, RawObject& out) {
  bool ok = false;
  auto bytes = slurp(root / "objects" / hex.substr(0, 2) / hex.substr(2), ok);
  if (!ok) return false;
  auto sp = bytes.find(' ');
  auto nl = bytes.find('\n');
  if (sp == std::string::npos || nl == std::string::npos || nl < sp) return false;
  out.kind = bytes.substr(0, sp);
  out.content = bytes.substr(nl + 1);
  return std::to_string(out.content.size()) == bytes.substr(sp + 1, nl - sp - 1);
}

std::vector<std::pair<unsigned long long, std::string>> head_records(const fs::path& root,
                                                                     const std::string& name) {
  bool ok = false;
  auto data = slurp(root / "graphs" / (name + ".head"), ok);
  std::vector<std::pair<unsigned long long, std::string>> out;
  for (std::size_t at = 0; at + 82 <= data.size(); at += 82)
    out.emplace_back(std::stoull(data.substr(at, 16), nullptr, 16), data.substr(at + 17, 64));
  return out;
}

std::vector<std::string> graph_names(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root / "graphs")) {
    auto n = e.path().filename().string();
    if (n.size() > 5 && n.substr(n.size() - 5) == ".head") out.push_back(n.substr(0, n.size() - 5));
  }
  return out;
}

std::vector<std::string> children(const RawObject& obj, bool follow_parents) {
  std::vector<std::string> out;
  std::istringstream in(obj.content);
  std::string line;
  if (obj.kind == "tree") {
    while (std::getline(in, line)) out.push_back(line.substr(5, 64));
  } else if (obj.kind == "commit") {
    while (std::getline(in, line) && !line.empty()) {
      if (line.rfind("tree ", 0) == 0) out.push_back(line.substr(5));
      if (follow_parents && line.rfind("parent ", 0) == 0) out.push_back(line.substr(7));
    }
  } else if (obj.kind == "txn") {
    while (std::getline(in, line))
      if (line.rfind("graph ", 0) == 0) out.push_back(line.substr(line.size() - 64));
  }
  return out;
}

std::set<std::string> closure(const fs::path& root, const std::vector<std::string>& roots,
                              bool follow_parents, std::set<std::string>* missing) {
  std::set<std::string> seen;
  std::vector<std::string> todo(roots.begin(), roots.end());
  while (!todo.empty()) {
    auto id = todo.back();
    todo.pop_back();
    if (seen.count(id) || (missing && missing->count(id))) continue;
    RawObject obj;
    if (!read_object(root, id, obj)) {
      if (missing) missing->insert(id);
      continue;
    }
    seen.insert(id);
    for (auto& c : children(obj, follow_parents)) todo.push_back(c);
  }
  return seen;
}

std::set<std::string> reachable(const fs::path& root) {
  std::vector<std::string> roots;
  for (const auto& g : graph_names(root))
    for (const auto& [seq, commit] : head_records(root, g)) roots.push_back(commit);
  for (const char* sub : {"pending", "failed"}) {
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(root / "txns" / sub, ec)) roots.push_back(e.path().filename().string());
  }
  return closure(root, roots, false);
}

}  // namespace oracle
