#pragma once

#include <optional>
#include <string>

#include "gridauth/expected.hpp"

namespace gridauth {

std::optional<std::string> read_file(const std::string &path);

// Writes to a temp file in the destination directory, then renames over the
// target. A reader never observes a partial file. mode applies to the new file.
Status write_file_atomic(const std::string &path, const std::string &content, int mode = 0600);

// Two-phase variant used to exercise the failure window: stage() writes the
// temp file, commit() renames it into place. Destroying the writer without
// commit() removes the temp file and leaves the target untouched.
class AtomicFileWriter {
  public:
    explicit AtomicFileWriter(std::string path, int mode = 0600);
    ~AtomicFileWriter();
    AtomicFileWriter(const AtomicFileWriter &) = delete;
    AtomicFileWriter &operator=(const AtomicFileWriter &) = delete;

    Status stage(const std::string &content);
    Status commit();

  private:
    std::string path_;
    std::string tmp_;
    int mode_;
    bool staged_ = false;
    bool committed_ = false;
};

Status ensure_dir(const std::string &path, int mode = 0700);

// Permission bits of the file (st_mode & 0777), or -1 if it does not exist.
int file_mode(const std::string &path);

} // namespace gridauth
