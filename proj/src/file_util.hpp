#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace graphstore::detail {

namespace fs = std::filesystem;

class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(UniqueFd&& o) noexcept : fd_(o.release()) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.release();
    }
    return *this;
  }
  ~UniqueFd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  int release() noexcept {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

/// Whole file contents; nullopt when the file does not exist.
std::optional<std::string> read_file_if_exists(const fs::path& path);
/// Whole file contents; throws NotFound / IoError.
std::string read_file(const fs::path& path);

void write_all_fd(int fd, std::string_view data, const fs::path& what);

/// Lowercase hex string of `bytes` random bytes.
std::string random_hex(std::size_t bytes);

/// Seconds since mtime; nullopt if the file is gone.
std::optional<double> file_age_secs(const fs::path& path);

std::uint64_t now_unix();

bool parse_u64(std::string_view s, std::uint64_t& out) noexcept;

}  // namespace graphstore::detail
