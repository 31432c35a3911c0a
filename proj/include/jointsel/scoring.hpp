#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "jointsel/core.hpp"

namespace jointsel {

/// values(i, j) = dot(src row i, trg row j) for one model.
struct SimilarityMatrix {
  std::size_t n = 0;
  Matrix values;
  std::string model_id;
};

/// Cross-similarity of the two sides of a super-batch.
///
/// Computed in row blocks with 64-bit accumulators; row blocks are spread over
/// `threads` workers (0 = hardware concurrency). Output does not depend on the
/// thread count.
SimilarityMatrix similarity_matrix(const EmbeddingMatrix& src, const EmbeddingMatrix& trg,
                                   unsigned threads = 0);

/// Negated learner similarity: pairs the learner already aligns score low.
Matrix hard_learner_scores(const SimilarityMatrix& sim_learner);

/// Reference similarity, unchanged.
Matrix easy_reference_scores(const SimilarityMatrix& sim_ref);

/// w_easy * S_ref - w_hard * S_learn, elementwise. The two models may have
/// different embedding widths; only the super-batch size must agree.
LearnabilityMatrix learnability_matrix(const SimilarityMatrix& sim_learner,
                                       const SimilarityMatrix& sim_ref,
                                       const ScoreWeights& w);

std::vector<float> diagonal(const SimilarityMatrix& s);

struct ScoreHistogram {
  std::vector<double> bin_edges;  // n_bins + 1 ascending edges over [-1, 1]
  std::vector<std::uint64_t> counts;
  double mean = 0.0;
  double variance = 0.0;  // population variance

  std::uint64_t total() const;
};

/// Uniform histogram over [-1, 1]. Values within 1e-5 outside the range are
/// clamped into the edge bins; anything further out throws ValueOutOfRange.
ScoreHistogram score_histogram(std::span<const float> values, std::size_t n_bins);

/// Accumulates histograms across super-batches without keeping the values.
class HistogramAccumulator {
 public:
  explicit HistogramAccumulator(std::size_t n_bins);
  void add(std::span<const float> values);
  ScoreHistogram finish() const;

 private:
  std::size_t n_bins_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// One JSON object per line: {"model", "edges", "counts", "mean", "variance"}.
std::string histogram_to_jsonl(const ScoreHistogram& h, const std::string& model_id);
ScoreHistogram histogram_from_jsonl(const std::string& line, std::string* model_id = nullptr);

}  // namespace jointsel
