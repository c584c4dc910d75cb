#pragma once

#include <filesystem>
#include <stdexcept>

namespace vitforge::cli {

class LockBusyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exclusive `.vitforge.lock` in a directory, holding the owner's pid.
/// A lock left by a process that no longer exists is taken over.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace vitforge::cli
