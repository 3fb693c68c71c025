#pragma once

#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsovt/error.hpp"
#include "dsovt/field.hpp"
#include "dsovt/random.hpp"

namespace dsovt::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dsovt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Field random_field(Rng& rng, int nx, int ny, int nc, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(nx) * ny * nc);
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Field(nx, ny, nc, std::move(v));
}

inline FieldSequence random_sequence(Rng& rng, int t, int nx, int ny, int nc, double lo = -1.0, double hi = 1.0) {
  std::vector<Field> frames;
  for (int i = 0; i < t; ++i) frames.push_back(random_field(rng, nx, ny, nc, lo, hi));
  return FieldSequence(std::move(frames));
}

/// Runs `f` and returns the ErrorKind it throws; fails the test if nothing is thrown.
template <typename F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected a dsovt::Error");
  return ErrorKind::Usage;
}

}  // namespace dsovt::test
