#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "jointsel/core.hpp"

namespace jointsel {

class DimMismatch : public Error {
 public:
  using Error::Error;
};
class ConflictingVector : public Error {
 public:
  using Error::Error;
};
class CorruptShard : public Error {
 public:
  using Error::Error;
};

struct CacheKey {
  std::string model_id;
  Digest content_hash{};

  bool operator==(const CacheKey&) const = default;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t stored_vectors = 0;
  std::uint64_t bytes_on_disk = 0;
};

// Shard file layout (all integers little-endian):
//   header: "EMBC" | u16 version | u16 model_id length | model_id bytes | u32 dim
//   record: 32-byte content hash | dim x f32 | u32 CRC-32 of (hash | floats)
namespace shard {
inline constexpr char kMagic[4] = {'E', 'M', 'B', 'C'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHashBytes = 32;
inline constexpr std::string_view kExtension = ".embc";

std::size_t header_size(std::string_view model_id);
std::size_t record_size(std::uint32_t dim);
std::vector<std::uint8_t> encode_header(std::string_view model_id, std::uint32_t dim);
std::vector<std::uint8_t> encode_record(const Digest& hash, std::span<const float> vector);
std::uint32_t checksum(std::span<const std::uint8_t> bytes);
}  // namespace shard

struct ShardReport {
  std::filesystem::path path;
  std::string model_id;
  std::uint32_t dim = 0;
  std::uint64_t records = 0;
  std::uint64_t checksum_failures = 0;
  std::uint64_t trailing_bytes = 0;  // partial record at the tail
  bool header_ok = true;
};

struct VerifyReport {
  std::vector<ShardReport> shards;
  std::uint64_t records() const;
  std::uint64_t failures() const;
  bool ok() const;
};

struct CompactReport {
  std::uint64_t kept = 0;
  std::uint64_t dropped_duplicates = 0;
  std::uint64_t dropped_corrupt = 0;
  std::uint64_t bytes_before = 0;
  std::uint64_t bytes_after = 0;
};

/// Content-addressed persistent embedding store.
///
/// Append-only shard files in one directory. The hash -> (shard, offset) index
/// is rebuilt from the shards on open, so a store is always recoverable from
/// its shard files alone. Partial trailing records (an interrupted append) are
/// ignored and cut off before the next append. Vectors read once are kept in
/// memory.
///
/// Thread safety: any number of concurrent readers; writers are serialized.
class EmbeddingCache {
 public:
  static EmbeddingCache open(const std::filesystem::path& dir, bool read_only = false);

  EmbeddingCache(EmbeddingCache&&) noexcept;
  EmbeddingCache& operator=(EmbeddingCache&&) noexcept;
  ~EmbeddingCache();

  const std::filesystem::path& dir() const noexcept;

  /// Declares the embedding width of a model. Throws DimMismatch if the store
  /// already holds the model at a different width.
  void register_model(const std::string& model_id, std::uint32_t dim);
  std::optional<std::uint32_t> model_dim(const std::string& model_id) const;
  std::vector<std::string> models() const;

  void put(const CacheKey& key, std::span<const float> vector);
  std::optional<std::vector<float>> get(const CacheKey& key);
  bool contains(const CacheKey& key) const;

  struct Lookup {
    std::vector<std::pair<CacheKey, std::vector<float>>> found;
    std::vector<CacheKey> missing;  // input order preserved
  };
  Lookup batch_lookup(std::span<const CacheKey> keys);

  CacheStats stats() const;
  VerifyReport verify() const;
  CompactReport compact();

 private:
  struct State;
  explicit EmbeddingCache(std::unique_ptr<State> state);
  std::unique_ptr<State> state_;
};

/// Scans one shard file without opening a store.
ShardReport verify_shard(const std::filesystem::path& path);

}  // namespace jointsel
