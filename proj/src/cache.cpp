#include "jointsel/cache.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>

namespace jointsel {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

std::string errno_message(const std::string& what, const fs::path& path) {
  return what + " '" + path.string() + "': " + std::strerror(errno);
}

bool read_exact(int fd, void* buf, std::size_t n, std::uint64_t offset) {
  auto* p = static_cast<std::uint8_t*>(buf);
  while (n > 0) {
    const ssize_t got = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) return false;
    p += got;
    n -= static_cast<std::size_t>(got);
    offset += static_cast<std::uint64_t>(got);
  }
  return true;
}

void write_exact(int fd, std::span<const std::uint8_t> bytes, std::uint64_t offset,
                 const fs::path& path) {
  const std::uint8_t* p = bytes.data();
  std::size_t n = bytes.size();
  while (n > 0) {
    const ssize_t put = ::pwrite(fd, p, n, static_cast<off_t>(offset));
    if (put < 0 && errno == EINTR) continue;
    if (put <= 0) throw Error(errno_message("write failed", path));
    p += put;
    n -= static_cast<std::size_t>(put);
    offset += static_cast<std::uint64_t>(put);
  }
}

struct DigestHash {
  std::size_t operator()(const Digest& d) const noexcept {
    std::uint64_t h;
    std::memcpy(&h, d.data(), sizeof h);
    return static_cast<std::size_t>(h);
  }
};

struct ParsedHeader {
  std::string model_id;
  std::uint32_t dim = 0;
  std::size_t size = 0;
};

std::optional<ParsedHeader> read_header(int fd, std::uint64_t file_size) {
  std::uint8_t fixed[8];
  if (file_size < 8 || !read_exact(fd, fixed, 8, 0)) return std::nullopt;
  if (std::memcmp(fixed, shard::kMagic, 4) != 0) return std::nullopt;
  if (get_u16(fixed + 4) != shard::kVersion) return std::nullopt;
  const std::uint16_t id_len = get_u16(fixed + 6);
  ParsedHeader h;
  h.size = 8 + id_len + 4;
  if (file_size < h.size) return std::nullopt;
  std::vector<std::uint8_t> rest(id_len + 4u);
  if (!read_exact(fd, rest.data(), rest.size(), 8)) return std::nullopt;
  h.model_id.assign(rest.begin(), rest.begin() + id_len);
  h.dim = get_u32(rest.data() + id_len);
  if (h.dim == 0) return std::nullopt;
  return h;
}

std::uint64_t file_size_of(int fd) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) return 0;
  return static_cast<std::uint64_t>(st.st_size);
}

std::string sanitize(std::string_view model_id) {
  std::string s;
  for (char c : model_id) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                      (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '_';
    s.push_back(keep ? c : '_');
  }
  return s.empty() ? std::string("model") : s;
}

}  // namespace

namespace shard {

std::size_t header_size(std::string_view model_id) { return 8 + model_id.size() + 4; }

std::size_t record_size(std::uint32_t dim) { return kHashBytes + 4ull * dim + 4; }

std::vector<std::uint8_t> encode_header(std::string_view model_id, std::uint32_t dim) {
  if (model_id.size() > UINT16_MAX) throw InvalidArgument("model id too long");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_u16(out, static_cast<std::uint16_t>(model_id.size()));
  out.insert(out.end(), model_id.begin(), model_id.end());
  put_u32(out, dim);
  return out;
}

std::uint32_t checksum(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_record(const Digest& hash, std::span<const float> vector) {
  std::vector<std::uint8_t> out(hash.begin(), hash.end());
  out.reserve(record_size(static_cast<std::uint32_t>(vector.size())));
  for (float f : vector) put_u32(out, std::bit_cast<std::uint32_t>(f));
  put_u32(out, checksum(out));
  return out;
}

}  // namespace shard

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::uint64_t VerifyReport::records() const {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.records;
  return n;
}

std::uint64_t VerifyReport::failures() const {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.checksum_failures + (s.header_ok ? 0 : 1);
  return n;
}

bool VerifyReport::ok() const {
  for (const auto& s : shards) {
    if (!s.header_ok || s.checksum_failures > 0 || s.trailing_bytes > 0) return false;
  }
  return true;
}

ShardReport verify_shard(const fs::path& path) {
  ShardReport report;
  report.path = path;
  const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) throw Error(errno_message("cannot open shard", path));
  const std::uint64_t size = file_size_of(fd);
  const auto header = read_header(fd, size);
  if (!header) {
    ::close(fd);
    report.header_ok = false;
    return report;
  }
  report.model_id = header->model_id;
  report.dim = header->dim;
  const std::size_t rec = shard::record_size(header->dim);
  std::vector<std::uint8_t> buf(rec);
  std::uint64_t off = header->size;
  for (; off + rec <= size; off += rec) {
    if (!read_exact(fd, buf.data(), rec, off)) break;
    ++report.records;
    const std::uint32_t stored = get_u32(buf.data() + rec - 4);
    if (shard::checksum({buf.data(), rec - 4}) != stored) ++report.checksum_failures;
  }
  report.trailing_bytes = size - off;
  ::close(fd);
  return report;
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

struct EmbeddingCache::State {
  struct Shard {
    fs::path path;
    std::string model_id;
    std::uint32_t dim = 0;
    int fd = -1;
    std::uint64_t end = 0;  // offset one past the last complete record
    bool has_partial_tail = false;
  };
  struct Location {
    std::size_t shard = 0;
    std::uint64_t offset = 0;
  };
  struct Model {
    std::uint32_t dim = 0;
    std::unordered_map<Digest, Location, DigestHash> index;
    std::optional<std::size_t> write_shard;
  };

  fs::path dir;
  bool read_only = false;
  std::vector<Shard> shards;
  std::map<std::string, Model> models;

  mutable std::shared_mutex mu;
  mutable std::mutex memory_mu;
  std::map<std::string, std::unordered_map<Digest, std::vector<float>, DigestHash>> memory;
  std::atomic<std::uint64_t> hits{0};
  std::atomic<std::uint64_t> misses{0};

  ~State() { close_all(); }

  void close_all() {
    for (auto& s : shards) {
      if (s.fd >= 0) {
        if (!read_only) ::fsync(s.fd);
        ::close(s.fd);
        s.fd = -1;
      }
    }
    shards.clear();
    models.clear();
  }

  void scan() {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == shard::kExtension) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
      const int fd = ::open(path.c_str(), (read_only ? O_RDONLY : O_RDWR) | O_CLOEXEC);
      if (fd < 0) throw Error(errno_message("cannot open shard", path));
      const std::uint64_t size = file_size_of(fd);
      const auto header = read_header(fd, size);
      if (!header) {
        ::close(fd);
        throw CorruptShard("bad shard header in '" + path.string() + "'");
      }
      auto [it, inserted] = models.try_emplace(header->model_id);
      Model& model = it->second;
      if (!inserted && model.dim != header->dim) {
        ::close(fd);
        throw CorruptShard("shard '" + path.string() + "' stores model '" + header->model_id +
                           "' at dim " + std::to_string(header->dim) + ", expected " +
                           std::to_string(model.dim));
      }
      model.dim = header->dim;

      Shard sh{path, header->model_id, header->dim, fd, header->size, false};
      const std::size_t rec = shard::record_size(header->dim);
      const std::size_t shard_index = shards.size();
      Digest key;
      for (std::uint64_t off = header->size; off + rec <= size; off += rec) {
        if (!read_exact(fd, key.data(), key.size(), off)) break;
        model.index.try_emplace(key, Location{shard_index, off});
        sh.end = off + rec;
      }
      sh.has_partial_tail = sh.end != size;
      shards.push_back(std::move(sh));
      model.write_shard = shard_index;
    }
  }

  std::vector<float> read_vector(const Location& loc) const {
    const Shard& sh = shards[loc.shard];
    const std::size_t rec = shard::record_size(sh.dim);
    std::vector<std::uint8_t> buf(rec);
    if (!read_exact(sh.fd, buf.data(), rec, loc.offset)) {
      throw CorruptShard("short read in '" + sh.path.string() + "'");
    }
    if (shard::checksum({buf.data(), rec - 4}) != get_u32(buf.data() + rec - 4)) {
      throw CorruptShard("checksum mismatch in '" + sh.path.string() + "' at offset " +
                         std::to_string(loc.offset));
    }
    std::vector<float> v(sh.dim);
    for (std::uint32_t k = 0; k < sh.dim; ++k) {
      v[k] = get_f32(buf.data() + shard::kHashBytes + 4ull * k);
    }
    return v;
  }

  std::size_t writable_shard(const std::string& model_id, Model& model) {
    if (model.write_shard) {
      Shard& sh = shards[*model.write_shard];
      if (sh.has_partial_tail) {
        if (::ftruncate(sh.fd, static_cast<off_t>(sh.end)) != 0) {
          throw Error(errno_message("cannot truncate partial record in", sh.path));
        }
        sh.has_partial_tail = false;
      }
      return *model.write_shard;
    }
    const std::string base = sanitize(model_id);
    fs::path path = dir / (base + std::string(shard::kExtension));
    for (int k = 1; fs::exists(path); ++k) {
      path = dir / (base + "-" + std::to_string(k) + std::string(shard::kExtension));
    }
    const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(errno_message("cannot create shard", path));
    const auto header = shard::encode_header(model_id, model.dim);
    write_exact(fd, header, 0, path);
    shards.push_back(Shard{path, model_id, model.dim, fd, header.size(), false});
    model.write_shard = shards.size() - 1;
    return shards.size() - 1;
  }

  std::uint64_t bytes_on_disk() const {
    std::uint64_t total = 0;
    for (const auto& s : shards) total += file_size_of(s.fd);
    return total;
  }
};

EmbeddingCache::EmbeddingCache(std::unique_ptr<State> state) : state_(std::move(state)) {}
EmbeddingCache::EmbeddingCache(EmbeddingCache&&) noexcept = default;
EmbeddingCache& EmbeddingCache::operator=(EmbeddingCache&&) noexcept = default;
EmbeddingCache::~EmbeddingCache() = default;

EmbeddingCache EmbeddingCache::open(const fs::path& dir, bool read_only) {
  if (!read_only) fs::create_directories(dir);
  if (!fs::is_directory(dir)) {
    throw Error("cache directory '" + dir.string() + "' does not exist");
  }
  auto state = std::make_unique<State>();
  state->dir = dir;
  state->read_only = read_only;
  state->scan();
  return EmbeddingCache(std::move(state));
}

const fs::path& EmbeddingCache::dir() const noexcept { return state_->dir; }

void EmbeddingCache::register_model(const std::string& model_id, std::uint32_t dim) {
  if (dim == 0) throw InvalidArgument("embedding dim must be positive");
  std::unique_lock lock(state_->mu);
  auto [it, inserted] = state_->models.try_emplace(model_id);
  if (!inserted && it->second.dim != dim) {
    throw DimMismatch("model '" + model_id + "' is registered at dim " +
                      std::to_string(it->second.dim) + ", not " + std::to_string(dim));
  }
  it->second.dim = dim;
}

std::optional<std::uint32_t> EmbeddingCache::model_dim(const std::string& model_id) const {
  std::shared_lock lock(state_->mu);
  const auto it = state_->models.find(model_id);
  if (it == state_->models.end()) return std::nullopt;
  return it->second.dim;
}

std::vector<std::string> EmbeddingCache::models() const {
  std::shared_lock lock(state_->mu);
  std::vector<std::string> out;
  for (const auto& [id, m] : state_->models) out.push_back(id);
  return out;
}

void EmbeddingCache::put(const CacheKey& key, std::span<const float> vector) {
  if (state_->read_only) throw Error("cache opened read-only");
  const double norm = std::sqrt(dot(vector, vector));
  if (std::abs(norm - 1.0) > kUnitNormTolerance) {
    throw InvalidArgument("cached vectors must be unit-norm");
  }
  std::unique_lock lock(state_->mu);
  auto [it, inserted] = state_->models.try_emplace(key.model_id);
  State::Model& model = it->second;
  if (inserted) model.dim = static_cast<std::uint32_t>(vector.size());
  if (model.dim != vector.size()) {
    throw DimMismatch("model '" + key.model_id + "' is registered at dim " +
                      std::to_string(model.dim) + ", got a " + std::to_string(vector.size()) +
                      "-dim vector");
  }
  if (const auto found = model.index.find(key.content_hash); found != model.index.end()) {
    const auto existing = state_->read_vector(found->second);
    const bool same = std::equal(existing.begin(), existing.end(), vector.begin(),
                                 [](float a, float b) {
                                   return std::bit_cast<std::uint32_t>(a) ==
                                          std::bit_cast<std::uint32_t>(b);
                                 });
    if (!same) {
      throw ConflictingVector("different vector already stored for " +
                              to_hex(key.content_hash) + " under '" + key.model_id + "'");
    }
    return;
  }
  const std::size_t si = state_->writable_shard(key.model_id, model);
  State::Shard& sh = state_->shards[si];
  const auto record = shard::encode_record(key.content_hash, vector);
  write_exact(sh.fd, record, sh.end, sh.path);
  model.index.emplace(key.content_hash, State::Location{si, sh.end});
  sh.end += record.size();
}

std::optional<std::vector<float>> EmbeddingCache::get(const CacheKey& key) {
  {
    std::lock_guard mem(state_->memory_mu);
    const auto m = state_->memory.find(key.model_id);
    if (m != state_->memory.end()) {
      const auto v = m->second.find(key.content_hash);
      if (v != m->second.end()) {
        ++state_->hits;
        return v->second;
      }
    }
  }
  std::vector<float> v;
  {
    std::shared_lock lock(state_->mu);
    const auto m = state_->models.find(key.model_id);
    if (m == state_->models.end()) {
      ++state_->misses;
      return std::nullopt;
    }
    const auto loc = m->second.index.find(key.content_hash);
    if (loc == m->second.index.end()) {
      ++state_->misses;
      return std::nullopt;
    }
    v = state_->read_vector(loc->second);
  }
  ++state_->hits;
  std::lock_guard mem(state_->memory_mu);
  state_->memory[key.model_id].try_emplace(key.content_hash, v);
  return v;
}

bool EmbeddingCache::contains(const CacheKey& key) const {
  std::shared_lock lock(state_->mu);
  const auto m = state_->models.find(key.model_id);
  return m != state_->models.end() && m->second.index.contains(key.content_hash);
}

EmbeddingCache::Lookup EmbeddingCache::batch_lookup(std::span<const CacheKey> keys) {
  Lookup out;
  for (const auto& key : keys) {
    if (auto v = get(key)) {
      out.found.emplace_back(key, std::move(*v));
    } else {
      out.missing.push_back(key);
    }
  }
  return out;
}

CacheStats EmbeddingCache::stats() const {
  std::shared_lock lock(state_->mu);
  CacheStats s;
  s.hits = state_->hits.load();
  s.misses = state_->misses.load();
  for (const auto& [id, m] : state_->models) s.stored_vectors += m.index.size();
  s.bytes_on_disk = state_->bytes_on_disk();
  return s;
}

VerifyReport EmbeddingCache::verify() const {
  std::shared_lock lock(state_->mu);
  VerifyReport report;
  for (const auto& sh : state_->shards) report.shards.push_back(verify_shard(sh.path));
  return report;
}

CompactReport EmbeddingCache::compact() {
  if (state_->read_only) throw Error("cache opened read-only");
  std::unique_lock lock(state_->mu);
  CompactReport report;
  report.bytes_before = state_->bytes_on_disk();

  // Group shards per model and rewrite each model into a single fresh shard.
  std::map<std::string, std::vector<std::size_t>> by_model;
  for (std::size_t i = 0; i < state_->shards.size(); ++i) {
    by_model[state_->shards[i].model_id].push_back(i);
  }
  std::vector<fs::path> obsolete;
  std::vector<std::pair<fs::path, fs::path>> renames;
  for (const auto& [model_id, shard_ids] : by_model) {
    const std::uint32_t dim = state_->shards[shard_ids.front()].dim;
    const std::size_t rec = shard::record_size(dim);
    const fs::path tmp = state_->dir / (sanitize(model_id) + ".compact.tmp");
    const int out = ::open(tmp.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (out < 0) throw Error(errno_message("cannot create", tmp));
    const auto header = shard::encode_header(model_id, dim);
    write_exact(out, header, 0, tmp);
    std::uint64_t out_end = header.size();

    std::unordered_map<Digest, bool, DigestHash> seen;
    std::vector<std::uint8_t> buf(rec);
    for (auto si : shard_ids) {
      const auto& sh = state_->shards[si];
      const std::uint64_t header_len = shard::header_size(sh.model_id);
      for (std::uint64_t off = header_len; off + rec <= sh.end; off += rec) {
        if (!read_exact(sh.fd, buf.data(), rec, off)) break;
        if (shard::checksum({buf.data(), rec - 4}) != get_u32(buf.data() + rec - 4)) {
          ++report.dropped_corrupt;
          continue;
        }
        Digest key;
        std::copy_n(buf.begin(), key.size(), key.begin());
        if (!seen.try_emplace(key, true).second) {
          ++report.dropped_duplicates;
          continue;
        }
        write_exact(out, buf, out_end, tmp);
        out_end += rec;
        ++report.kept;
      }
      obsolete.push_back(sh.path);
    }
    ::fsync(out);
    ::close(out);
    renames.emplace_back(tmp, state_->dir / (sanitize(model_id) + std::string(shard::kExtension)));
  }

  state_->close_all();
  for (const auto& p : obsolete) fs::remove(p);
  for (const auto& [from, to] : renames) {
    fs::path target = to;
    for (int k = 1; fs::exists(target); ++k) {
      target = state_->dir /
               (to.stem().string() + "-" + std::to_string(k) + std::string(shard::kExtension));
    }
    fs::rename(from, target);
  }
  state_->scan();
  report.bytes_after = state_->bytes_on_disk();
  return report;
}

}  // namespace jointsel
