#include "gridauth/fsutil.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <sys/stat.h>
#include <sys/types.h>
#include <unistd.h>

#include "gridauth/rng.hpp"

namespace gridauth {

std::optional<std::string> read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

AtomicFileWriter::AtomicFileWriter(std::string path, int mode)
    : path_(std::move(path)), tmp_(path_ + ".tmp." + random_hex(6)), mode_(mode) {}

AtomicFileWriter::~AtomicFileWriter() {
    if (staged_ && !committed_) ::unlink(tmp_.c_str());
}

Status AtomicFileWriter::stage(const std::string &content) {
    int fd = ::open(tmp_.c_str(), O_CREAT | O_EXCL | O_WRONLY, mode_);
    if (fd < 0) {
        return Error{"io_error", "open " + tmp_ + ": " + std::strerror(errno)};
    }
    size_t off = 0;
    while (off < content.size()) {
        ssize_t n = ::write(fd, content.data() + off, content.size() - off);
        if (n < 0) {
            int e = errno;
            ::close(fd);
            ::unlink(tmp_.c_str());
            return Error{"io_error", "write " + tmp_ + ": " + std::strerror(e)};
        }
        off += static_cast<size_t>(n);
    }
    ::close(fd);
    staged_ = true;
    return ok_status();
}

Status AtomicFileWriter::commit() {
    if (!staged_) return Error{"io_error", "commit before stage"};
    if (::rename(tmp_.c_str(), path_.c_str()) != 0) {
        int e = errno;
        ::unlink(tmp_.c_str());
        return Error{"io_error", "rename to " + path_ + ": " + std::strerror(e)};
    }
    committed_ = true;
    return ok_status();
}

Status write_file_atomic(const std::string &path, const std::string &content, int mode) {
    AtomicFileWriter w(path, mode);
    if (auto s = w.stage(content); !s.ok()) return s;
    return w.commit();
}

Status ensure_dir(const std::string &path, int mode) {
    if (::mkdir(path.c_str(), mode) == 0 || errno == EEXIST) return ok_status();
    return Error{"io_error", "mkdir " + path + ": " + std::strerror(errno)};
}

int file_mode(const std::string &path) {
    struct stat st{};
    if (::stat(path.c_str(), &st) != 0) return -1;
    return static_cast<int>(st.st_mode & 0777);
}

} // namespace gridauth
