#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

// Shared scratch-dir plumbing for the test binaries.

namespace testsupport {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::random_device rd;
    char buf[64];
    std::snprintf(buf, sizeof buf, "cdpo-test-%08x%08x", rd(), rd());
    path = std::filesystem::temp_directory_path() / buf;
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

}  // namespace testsupport
