#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

namespace testutil {

// Scratch directory removed on destruction.
class TempDir {
  public:
    TempDir() {
        char tmpl[] = "/tmp/sasforge_test_XXXXXX";
        if (!mkdtemp(tmpl)) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

  private:
    std::string path_;
};

}  // namespace testutil
