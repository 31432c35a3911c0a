#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "jointsel/core.hpp"
#include "jointsel/rng.hpp"
#include "jointsel/scoring.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("jointsel-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
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

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline jointsel::Matrix random_unit_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  jointsel::Rng rng(seed);
  jointsel::Matrix m(n, dim);
  for (auto& x : m.data) x = static_cast<float>(rng.normal());
  return jointsel::normalize_rows(std::move(m));
}

inline std::vector<jointsel::PairId> iota_ids(std::size_t n) {
  std::vector<jointsel::PairId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

inline jointsel::EmbeddingMatrix random_embeddings(std::size_t n, std::size_t dim,
                                                   std::uint64_t seed,
                                                   const std::string& model = "m",
                                                   jointsel::Side side = jointsel::Side::kSource) {
  return jointsel::EmbeddingMatrix(model, side, random_unit_rows(n, dim, seed), iota_ids(n));
}

// Learnability matrix with entries uniform in [-1, 1].
inline jointsel::LearnabilityMatrix random_learnability(std::size_t n, std::uint64_t seed) {
  jointsel::Rng rng(seed);
  jointsel::LearnabilityMatrix m;
  m.n = n;
  m.values = jointsel::Matrix(n, n);
  for (auto& x : m.values.data) x = static_cast<float>(2.0 * rng.uniform_open() - 1.0);
  return m;
}

inline jointsel::LearnabilityMatrix learnability_from(std::size_t n, std::vector<float> values) {
  jointsel::LearnabilityMatrix m;
  m.n = n;
  m.values = jointsel::Matrix(n, n, std::move(values));
  return m;
}

}  // namespace testing
