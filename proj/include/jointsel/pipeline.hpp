#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jointsel/cache.hpp"
#include "jointsel/config.hpp"
#include "jointsel/core.hpp"
#include "jointsel/scoring.hpp"
#include "jointsel/selector.hpp"

namespace jointsel {

class MissingEmbedding : public Error {
 public:
  MissingEmbedding(PairId id, const std::string& model_id)
      : Error("no embedding for pair " + std::to_string(id) + " under model '" + model_id + "'"),
        id_(id) {}
  PairId pair_id() const noexcept { return id_; }

 private:
  PairId id_;
};

// ---------------------------------------------------------------------------
// Embedding providers
// ---------------------------------------------------------------------------

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual const std::string& model_id() const = 0;
  virtual std::uint32_t dim() const = 0;
  /// Writes the (not necessarily normalized) embedding of one side of a pair
  /// into `out`. Returns false when the provider cannot supply it.
  virtual bool embed(const PairRecord& pair, Side side, std::span<float> out) = 0;
};

/// Reads embeddings from a directory of shard files, keyed by content hash.
class ShardFileProvider final : public EmbeddingProvider {
 public:
  ShardFileProvider(const std::filesystem::path& dir, std::string model_id);
  const std::string& model_id() const override { return model_id_; }
  std::uint32_t dim() const override { return dim_; }
  bool embed(const PairRecord& pair, Side side, std::span<float> out) override;

 private:
  std::string model_id_;
  EmbeddingCache store_;
  std::uint32_t dim_ = 0;
};

/// Adapts a callable, e.g. an in-process encoder or a simulation.
class FunctionProvider final : public EmbeddingProvider {
 public:
  using Fn = std::function<bool(const PairRecord&, Side, std::span<float>)>;
  FunctionProvider(std::string model_id, std::uint32_t dim, Fn fn)
      : model_id_(std::move(model_id)), dim_(dim), fn_(std::move(fn)) {}
  const std::string& model_id() const override { return model_id_; }
  std::uint32_t dim() const override { return dim_; }
  bool embed(const PairRecord& pair, Side side, std::span<float> out) override {
    return fn_(pair, side, out);
  }

 private:
  std::string model_id_;
  std::uint32_t dim_;
  Fn fn_;
};

/// Resolves reference embeddings through the cache (when given); misses go to
/// the provider and are stored. Vectors are normalized before they are cached
/// so warm and cold resolution return identical bits.
class ReferenceResolver {
 public:
  ReferenceResolver(EmbeddingProvider* provider, EmbeddingCache* cache);

  const std::string& model_id() const { return model_id_; }
  std::uint32_t dim() const { return dim_; }

  EmbeddingMatrix resolve(std::span<const PairRecord> pairs, Side side);

  /// Side embeddings computed by the provider (cache misses or no cache).
  std::uint64_t provider_calls() const noexcept { return provider_calls_; }

 private:
  EmbeddingProvider* provider_;
  EmbeddingCache* cache_;
  std::string model_id_;
  std::uint32_t dim_ = 0;
  std::uint64_t provider_calls_ = 0;
};

/// Embeds every pair through the provider (never cached) and normalizes.
EmbeddingMatrix embed_learner(EmbeddingProvider& provider, std::span<const PairRecord> pairs,
                              Side side);

// ---------------------------------------------------------------------------
// Super-batches
// ---------------------------------------------------------------------------

struct SuperBatch {
  std::uint64_t ordinal = 0;
  std::vector<PairRecord> pairs;
  EmbeddingMatrix learner_src;
  EmbeddingMatrix learner_trg;
  EmbeddingMatrix ref_src;
  EmbeddingMatrix ref_trg;
};

/// Corpus positions for one epoch: corpus order in epoch 0, a seeded
/// permutation in later epochs.
std::vector<std::size_t> epoch_order(std::size_t corpus_size, std::uint64_t seed,
                                     std::size_t epoch);

/// Cuts an epoch order into super-batches of `size`; the last may be smaller.
class SuperBatchAssembler {
 public:
  SuperBatchAssembler(std::span<const PairRecord> corpus, std::vector<std::size_t> order,
                      std::size_t size, EmbeddingProvider& learner, ReferenceResolver& reference,
                      std::uint64_t first_ordinal = 0);

  std::optional<SuperBatch> next();

 private:
  std::span<const PairRecord> corpus_;
  std::vector<std::size_t> order_;
  std::size_t size_;
  EmbeddingProvider& learner_;
  ReferenceResolver& reference_;
  std::size_t pos_ = 0;
  std::uint64_t ordinal_;
};

// ---------------------------------------------------------------------------
// Selection runs
// ---------------------------------------------------------------------------

struct SelectionRecord {
  std::uint64_t super_batch_ordinal = 0;
  std::vector<PairId> selected_ids;
  std::vector<std::size_t> chunk_of;
  std::vector<float> diag_scores;
  std::uint64_t seed = 0;
  // Filled only when texts are requested.
  std::vector<std::string> src_texts;
  std::vector<std::string> trg_texts;
};

std::string to_jsonl(const SelectionRecord& r);
SelectionRecord selection_record_from_jsonl(const std::string& line);

struct RunCounters {
  std::uint64_t super_batches = 0;
  std::uint64_t pairs_scored = 0;       // learner forward passes (pairs)
  std::uint64_t samples_trained = 0;    // selected pairs
  double reference_forwards = 0.0;      // pairs, counted as sides / 2
  double scoring_flops = 0.0;
  std::uint64_t passthrough_tails = 0;  // tails too small to select from
};

struct RunReport {
  std::uint64_t samples_trained = 0;
  std::uint64_t super_batches = 0;
  double total_flops = 0.0;
  double flops_relative_to_iid = 0.0;
  CacheStats cache_stats;
  std::map<std::string, ScoreHistogram> histograms;
  RunCounters counters;
};

/// total = reference fwd (provider calls only) + learner fwd on every scored pair
///       + learner fwd+bwd on selected pairs + similarity products;
/// relative = total / (learner fwd+bwd * iid_samples_for_parity), 0 if that is 0.
RunReport flops_report(const RunCounters& counters, const CostModel& cost,
                       std::uint64_t iid_samples_for_parity);

std::string to_json(const RunReport& report);
RunReport run_report_from_json(const std::string& text);
std::string render_report(const RunReport& report);

/// Drives selection over a corpus. Learner embeddings are recomputed for every
/// super-batch; reference embeddings resolve through the cache.
class SelectionRun {
 public:
  /// Receives each result in super-batch order. Return false to stop early.
  using Sink = std::function<bool(const SuperBatch&, const SelectionResult&,
                                  const SelectionRecord&)>;

  SelectionRun(const RunConfig& cfg, std::span<const PairRecord> corpus,
               EmbeddingProvider& learner, EmbeddingProvider& reference,
               EmbeddingCache* cache);

  /// One pass over the corpus. Returns false if the sink stopped the run.
  bool run_epoch(std::size_t epoch, const Sink& sink);

  /// All configured epochs.
  void run(const Sink& sink);

  /// Similarity histograms only; no selection.
  void score_epoch(std::size_t epoch);

  const RunCounters& counters() const noexcept { return counters_; }
  RunReport report() const;

 private:
  SelectionResult select(const SuperBatch& batch, const LearnabilityMatrix& m,
                         std::uint64_t seed);

  RunConfig cfg_;
  std::span<const PairRecord> corpus_;
  EmbeddingProvider& learner_;
  ReferenceResolver reference_;
  EmbeddingCache* cache_;
  RunCounters counters_;
  HistogramAccumulator learner_hist_;
  HistogramAccumulator reference_hist_;
  std::uint64_t next_ordinal_ = 0;
};

}  // namespace jointsel
