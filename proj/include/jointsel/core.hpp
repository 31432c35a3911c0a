#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jointsel {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define JOINTSEL_DEFINE_ERROR(Name) \
  class Name : public Error {       \
   public:                          \
    using Error::Error;             \
  }

JOINTSEL_DEFINE_ERROR(DimensionMismatch);
JOINTSEL_DEFINE_ERROR(ModelMismatch);
JOINTSEL_DEFINE_ERROR(ValueOutOfRange);
JOINTSEL_DEFINE_ERROR(DegenerateConfig);
JOINTSEL_DEFINE_ERROR(KTooLarge);
JOINTSEL_DEFINE_ERROR(InvalidArgument);
JOINTSEL_DEFINE_ERROR(UnknownId);
JOINTSEL_DEFINE_ERROR(MissingLabel);

#undef JOINTSEL_DEFINE_ERROR

class ZeroVectorRow : public Error {
 public:
  explicit ZeroVectorRow(std::size_t row)
      : Error("zero-norm embedding row " + std::to_string(row)), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

using PairId = std::uint64_t;
using Digest = std::array<std::uint8_t, 32>;

enum class Side : std::uint8_t { kSource = 0, kTarget = 1 };

std::string_view side_name(Side side);

/// SHA-256 over a one-byte side tag ('s' or 't') followed by the UTF-8 text.
/// Used as the content-addressed cache key and shared with external exporters.
Digest content_hash(std::string_view text, Side side);

std::string to_hex(std::span<const std::uint8_t> bytes);

struct PairRecord {
  PairId id = 0;
  std::string src_text;
  std::string trg_text;
  Digest src_hash{};
  Digest trg_hash{};
  std::optional<bool> noise_label;

  static PairRecord make(PairId id, std::string src, std::string trg,
                         std::optional<bool> noise_label = std::nullopt);

  const std::string& text(Side side) const {
    return side == Side::kSource ? src_text : trg_text;
  }
  const Digest& hash(Side side) const {
    return side == Side::kSource ? src_hash : trg_hash;
  }
};

// Dense row-major matrix of 32-bit floats.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> values);

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

inline constexpr double kUnitNormTolerance = 1e-5;
inline constexpr double kZeroNormThreshold = 1e-12;

/// L2-normalized embeddings for one side of a super-batch under one model.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(std::string model_id, Side side, Matrix rows,
                  std::vector<PairId> row_ids);

  const std::string& model_id() const noexcept { return model_id_; }
  Side side() const noexcept { return side_; }
  std::size_t n() const noexcept { return rows_.rows; }
  std::size_t dim() const noexcept { return rows_.cols; }
  const Matrix& rows() const noexcept { return rows_; }
  const std::vector<PairId>& row_ids() const noexcept { return row_ids_; }

 private:
  std::string model_id_;
  Side side_;
  Matrix rows_;
  std::vector<PairId> row_ids_;
};

/// Normalizes every row to unit L2 norm. Throws ZeroVectorRow for degenerate rows.
Matrix normalize_rows(Matrix raw);

EmbeddingMatrix normalize_rows(const Matrix& raw, std::string model_id, Side side,
                               std::vector<PairId> row_ids);

/// Normalizes a single vector in place; returns false if it is (near) zero.
bool normalize_in_place(std::span<float> v);

double dot(std::span<const float> a, std::span<const float> b);

struct ScoreWeights {
  double w_easy = 0.8;  // reference similarity
  double w_hard = 0.2;  // learner similarity

  void validate() const;
  double total() const { return w_easy + w_hard; }
  bool operator==(const ScoreWeights&) const = default;
};

enum class Chunk0Policy { kWeighted, kUniform };

std::string_view chunk0_policy_name(Chunk0Policy p);
Chunk0Policy parse_chunk0_policy(std::string_view s);

struct SelectionConfig {
  std::size_t super_batch_size = 4000;
  double filter_ratio = 0.9;
  std::size_t n_chunks = 4;
  ScoreWeights weights;
  double large_constant = 1e6;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  Chunk0Policy chunk0_policy = Chunk0Policy::kWeighted;

  // Throws DegenerateConfig / InvalidArgument.
  void validate() const;
};

struct LearnabilityMatrix {
  std::size_t n = 0;
  Matrix values;
  ScoreWeights weights;

  float operator()(std::size_t i, std::size_t j) const { return values(i, j); }
  std::vector<float> diagonal() const;
};

struct SelectionCounters {
  double elapsed_ms = 0.0;
  std::uint64_t score_flops = 0;
};

struct SelectionResult {
  std::vector<std::size_t> selected;   // indices into the super-batch, in draw order
  std::vector<std::size_t> chunk_of;   // parallel to `selected`
  std::vector<float> diag_scores;      // parallel to `selected`; empty for iid
  SelectionCounters counters;
};

}  // namespace jointsel
