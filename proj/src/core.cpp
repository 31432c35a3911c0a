#include "jointsel/core.hpp"

#include <openssl/evp.h>

#include <cmath>

namespace jointsel {

std::string_view side_name(Side side) {
  return side == Side::kSource ? "src" : "trg";
}

Digest content_hash(std::string_view text, Side side) {
  const unsigned char tag = side == Side::kSource ? 's' : 't';
  Digest out{};
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("EVP_MD_CTX_new failed");
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, &tag, 1) == 1 &&
                  EVP_DigestUpdate(ctx, text.data(), text.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, out.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok || len != out.size()) throw Error("sha256 digest failed");
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xf]);
  }
  return s;
}

PairRecord PairRecord::make(PairId id, std::string src, std::string trg,
                            std::optional<bool> noise_label) {
  PairRecord r;
  r.id = id;
  r.src_hash = content_hash(src, Side::kSource);
  r.trg_hash = content_hash(trg, Side::kTarget);
  r.src_text = std::move(src);
  r.trg_text = std::move(trg);
  r.noise_label = noise_label;
  return r;
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<float> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw DimensionMismatch("matrix buffer has " + std::to_string(data.size()) +
                            " values, expected " + std::to_string(r * c));
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  }
  return acc;
}

bool normalize_in_place(std::span<float> v) {
  const double norm = std::sqrt(dot(v, v));
  if (!(norm > kZeroNormThreshold)) return false;
  for (auto& x : v) x = static_cast<float>(x / norm);
  return true;
}

Matrix normalize_rows(Matrix raw) {
  for (std::size_t r = 0; r < raw.rows; ++r) {
    if (!normalize_in_place(raw.row(r))) throw ZeroVectorRow(r);
  }
  return raw;
}

EmbeddingMatrix::EmbeddingMatrix(std::string model_id, Side side, Matrix rows,
                                 std::vector<PairId> row_ids)
    : model_id_(std::move(model_id)),
      side_(side),
      rows_(std::move(rows)),
      row_ids_(std::move(row_ids)) {
  if (rows_.rows == 0 || rows_.cols == 0) {
    throw InvalidArgument("embedding matrix must have n >= 1 and dim >= 1");
  }
  if (row_ids_.size() != rows_.rows) {
    throw DimensionMismatch("row_ids do not align with embedding rows");
  }
  for (std::size_t r = 0; r < rows_.rows; ++r) {
    const auto v = rows_.row(r);
    const double norm = std::sqrt(dot(v, v));
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw ValueOutOfRange("embedding row " + std::to_string(r) + " of model '" +
                            model_id_ + "' is not unit-norm");
    }
  }
}

EmbeddingMatrix normalize_rows(const Matrix& raw, std::string model_id, Side side,
                               std::vector<PairId> row_ids) {
  return EmbeddingMatrix(std::move(model_id), side, normalize_rows(raw),
                         std::move(row_ids));
}

void ScoreWeights::validate() const {
  if (!(w_easy >= 0.0) || !(w_hard >= 0.0) || !std::isfinite(w_easy) ||
      !std::isfinite(w_hard)) {
    throw InvalidArgument("score weights must be finite and non-negative");
  }
  if (!(w_easy + w_hard > 0.0)) {
    throw InvalidArgument("score weights must not both be zero");
  }
}

std::string_view chunk0_policy_name(Chunk0Policy p) {
  return p == Chunk0Policy::kWeighted ? "weighted" : "uniform";
}

Chunk0Policy parse_chunk0_policy(std::string_view s) {
  if (s == "weighted") return Chunk0Policy::kWeighted;
  if (s == "uniform") return Chunk0Policy::kUniform;
  throw InvalidArgument("unknown chunk0 policy '" + std::string(s) + "'");
}

void SelectionConfig::validate() const {
  weights.validate();
  if (super_batch_size == 0) throw InvalidArgument("super_batch_size must be positive");
  if (n_chunks == 0) throw InvalidArgument("n_chunks must be positive");
  if (!(filter_ratio >= 0.0 && filter_ratio < 1.0)) {
    throw InvalidArgument("filter_ratio must lie in [0, 1)");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidArgument("temperature must be positive");
  }
  if (!std::isfinite(large_constant)) throw InvalidArgument("large constant must be finite");
  const double draws =
      std::floor(static_cast<double>(super_batch_size) * (1.0 - filter_ratio) /
                     static_cast<double>(n_chunks) +
                 1e-9);
  if (draws < 1.0) {
    throw DegenerateConfig("super_batch_size * (1 - filter_ratio) / n_chunks < 1");
  }
}

std::vector<float> LearnabilityMatrix::diagonal() const {
  std::vector<float> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = values(i, i);
  return d;
}

}  // namespace jointsel
