#pragma once

// Test-only oracles. Nothing here calls into the graphstore library: objects
// and head files are parsed straight from disk and hashed with libsodium, so
// these can check the library rather than restate it.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

namespace fs = std::filesystem;

std::string sha256_hex(const std::string& bytes);

/// `<kind> <len>\n<content>`
std::string canonical(const std::string& kind, const std::string& content);

struct RawObject {
  std::string kind;
  std::string content;
};

/// All object files under root/objects/xx/, keyed by 64-hex id.
std::set<std::string> object_ids(const fs::path& root);
bool read_object(const fs::path& root, const std::string& hex, RawObject& out);

/// Commit hexes of every complete 82-byte record of graph `name`.
std::vector<std::pair<unsigned long long, std::string>> head_records(const fs::path& root,
                                                                     const std::string& name);
std::vector<std::string> graph_names(const fs::path& root);

/// Ids referenced by an object: tree entries; a commit's tree (and parents
/// when follow_parents); a txn's commits.
std::vector<std::string> children(const RawObject& obj, bool follow_parents);

/// Brute-force closure. Missing ids are collected separately.
std::set<std::string> closure(const fs::path& root, const std::vector<std::string>& roots,
                              bool follow_parents, std::set<std::string>* missing = nullptr);

/// Objects GC must keep: version closures of every head record, plus pending
/// and failed txn records with their commits.
std::set<std::string> reachable(const fs::path& root);

}  // namespace oracle
