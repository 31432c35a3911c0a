#include "jointsel/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <Eigen/Core>

#include "json.hpp"

namespace jointsel {

namespace {

constexpr std::size_t kRowBlock = 64;
constexpr double kRangeSlack = 1e-5;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMajor widen(const Matrix& m) {
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols))
      .cast<double>();
}

// Rows [row_begin, row_end) of a * b^T. Row blocks have a fixed size, so the
// result does not depend on how blocks are spread over threads.
void similarity_rows(const RowMajor& a, const RowMajor& b, Matrix& out, std::size_t row_begin,
                     std::size_t row_end) {
  const auto r0 = static_cast<Eigen::Index>(row_begin);
  const auto rn = static_cast<Eigen::Index>(row_end - row_begin);
  const RowMajor block = a.middleRows(r0, rn) * b.transpose();
  for (Eigen::Index i = 0; i < rn; ++i) {
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      out(row_begin + static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          static_cast<float>(block(i, j));
    }
  }
}

}  // namespace

SimilarityMatrix similarity_matrix(const EmbeddingMatrix& src, const EmbeddingMatrix& trg,
                                   unsigned threads) {
  if (src.model_id() != trg.model_id()) {
    throw ModelMismatch("similarity between models '" + src.model_id() + "' and '" +
                        trg.model_id() + "'");
  }
  if (src.dim() != trg.dim() || src.n() != trg.n()) {
    throw DimensionMismatch("source is " + std::to_string(src.n()) + "x" +
                            std::to_string(src.dim()) + ", target is " +
                            std::to_string(trg.n()) + "x" + std::to_string(trg.dim()));
  }
  if (src.row_ids() != trg.row_ids()) {
    throw DimensionMismatch("source and target row ids are not aligned");
  }

  const std::size_t n = src.n();
  SimilarityMatrix s{n, Matrix(n, n), src.model_id()};
  const std::size_t n_blocks = (n + kRowBlock - 1) / kRowBlock;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_blocks));

  const auto a = widen(src.rows());
  const auto b = widen(trg.rows());
  auto worker = [&](unsigned t) {
    for (std::size_t blk = t; blk < n_blocks; blk += threads) {
      const std::size_t r0 = blk * kRowBlock;
      similarity_rows(a, b, s.values, r0, std::min(n, r0 + kRowBlock));
    }
  };
  if (threads <= 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
  }
  return s;
}

Matrix hard_learner_scores(const SimilarityMatrix& sim_learner) {
  Matrix out = sim_learner.values;
  for (auto& x : out.data) x = -x;
  return out;
}

Matrix easy_reference_scores(const SimilarityMatrix& sim_ref) { return sim_ref.values; }

LearnabilityMatrix learnability_matrix(const SimilarityMatrix& sim_learner,
                                       const SimilarityMatrix& sim_ref,
                                       const ScoreWeights& w) {
  w.validate();
  if (sim_learner.n != sim_ref.n || sim_learner.values.data.size() != sim_ref.values.data.size()) {
    throw DimensionMismatch("learner super-batch has " + std::to_string(sim_learner.n) +
                            " rows, reference has " + std::to_string(sim_ref.n));
  }
  const Matrix hard = hard_learner_scores(sim_learner);
  const Matrix easy = easy_reference_scores(sim_ref);
  LearnabilityMatrix m{sim_ref.n, Matrix(sim_ref.n, sim_ref.n), w};
  for (std::size_t k = 0; k < m.values.data.size(); ++k) {
    m.values.data[k] = static_cast<float>(w.w_easy * static_cast<double>(easy.data[k]) +
                                          w.w_hard * static_cast<double>(hard.data[k]));
  }
  return m;
}

std::vector<float> diagonal(const SimilarityMatrix& s) {
  std::vector<float> d(s.n);
  for (std::size_t i = 0; i < s.n; ++i) d[i] = s.values(i, i);
  return d;
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

std::uint64_t ScoreHistogram::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

HistogramAccumulator::HistogramAccumulator(std::size_t n_bins)
    : n_bins_(n_bins), counts_(n_bins, 0) {
  if (n_bins == 0) throw InvalidArgument("histogram needs at least one bin");
}

void HistogramAccumulator::add(std::span<const float> values) {
  for (float f : values) {
    const double v = f;
    if (!(v >= -1.0 - kRangeSlack && v <= 1.0 + kRangeSlack)) {
      throw ValueOutOfRange("score " + std::to_string(v) + " outside [-1, 1]");
    }
    const double pos = (v + 1.0) / 2.0 * static_cast<double>(n_bins_);
    const auto bin = static_cast<std::size_t>(
        std::clamp(std::floor(pos), 0.0, static_cast<double>(n_bins_ - 1)));
    ++counts_[bin];
    ++n_;
    const double delta = v - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (v - mean_);
  }
}

ScoreHistogram HistogramAccumulator::finish() const {
  ScoreHistogram h;
  h.bin_edges.resize(n_bins_ + 1);
  for (std::size_t b = 0; b <= n_bins_; ++b) {
    h.bin_edges[b] = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(n_bins_);
  }
  h.counts = counts_;
  h.mean = n_ > 0 ? mean_ : 0.0;
  h.variance = n_ > 0 ? m2_ / static_cast<double>(n_) : 0.0;
  return h;
}

ScoreHistogram score_histogram(std::span<const float> values, std::size_t n_bins) {
  HistogramAccumulator acc(n_bins);
  acc.add(values);
  return acc.finish();
}

std::string histogram_to_jsonl(const ScoreHistogram& h, const std::string& model_id) {
  nlohmann::ordered_json j;
  j["model"] = model_id;
  j["edges"] = h.bin_edges;
  j["counts"] = h.counts;
  j["mean"] = h.mean;
  j["variance"] = h.variance;
  return j.dump();
}

ScoreHistogram histogram_from_jsonl(const std::string& line, std::string* model_id) {
  const auto j = nlohmann::json::parse(line);
  ScoreHistogram h;
  h.bin_edges = j.at("edges").get<std::vector<double>>();
  h.counts = j.at("counts").get<std::vector<std::uint64_t>>();
  h.mean = j.at("mean").get<double>();
  h.variance = j.at("variance").get<double>();
  if (model_id != nullptr) *model_id = j.at("model").get<std::string>();
  return h;
}

}  // namespace jointsel
