#include "vitforge_cli/lock.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <fstream>
#include <string>

#include <fmt/format.h>

namespace vitforge::cli {

namespace {

bool owner_alive(const std::filesystem::path& lock) {
  std::ifstream in(lock);
  long pid = 0;
  if (!(in >> pid) || pid <= 0) return true;  // being written, or foreign: assume held
  return ::kill(static_cast<pid_t>(pid), 0) == 0 || errno != ESRCH;
}

}  // namespace

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".vitforge.lock") {
  std::filesystem::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      const auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (written != static_cast<ssize_t>(pid.size())) {
        std::filesystem::remove(path_);
        throw std::runtime_error(fmt::format("cannot write lock file {}", path_.string()));
      }
      return;
    }
    if (errno != EEXIST) throw std::runtime_error(fmt::format("cannot create lock file {}", path_.string()));
    if (attempt == 0 && !owner_alive(path_)) {
      std::filesystem::remove(path_);
      continue;
    }
    break;
  }
  throw LockBusyError(fmt::format("{} is in use by another vitforge process (remove {} if that process is gone)",
                                  dir.string(), path_.string()));
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace vitforge::cli
