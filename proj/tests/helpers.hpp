#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace soh::testutil {

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    dir_ = std::filesystem::temp_directory_path() /
           ("soh-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter++));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }
  const std::filesystem::path& dir() const { return dir_; }

private:
  std::filesystem::path dir_;
};

inline std::vector<double> random_series(std::mt19937_64& rng, int max_len,
                                         int max_value) {
  std::uniform_int_distribution<int> len_dist(1, max_len);
  std::uniform_int_distribution<int> val_dist(0, max_value);
  std::vector<double> out(static_cast<std::size_t>(len_dist(rng)));
  for (auto& v : out) v = val_dist(rng);
  return out;
}

}  // namespace soh::testutil
