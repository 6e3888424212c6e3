#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "sgdet/tensor.hpp"

namespace sgdet::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

inline Tensor random_param(Shape shape, std::mt19937_64& rng, double scale = 0.5) {
  Tensor t = random_tensor(std::move(shape), rng, scale);
  t.set_requires_grad(true);
  return t;
}

inline void fill_random(Tensor& t, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& x : t.mutable_data()) x = dist(rng);
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("sgdet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

 private:
  std::filesystem::path path_;
};

}  // namespace sgdet::testing
