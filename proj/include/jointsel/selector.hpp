#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jointsel/core.hpp"

namespace jointsel {

/// Indices already drawn in the current selection.
class SampledMask {
 public:
  explicit SampledMask(std::size_t n) : flags_(n, false) {}

  std::size_t n() const noexcept { return flags_.size(); }
  std::size_t count() const noexcept { return count_; }
  bool operator[](std::size_t i) const { return flags_[i]; }

  void set(std::size_t i);
  void set(std::span<const std::size_t> indices);

 private:
  std::vector<bool> flags_;
  std::size_t count_ = 0;
};

/// floor(n_rows * (1 - filter_ratio) / n_chunks). Throws DegenerateConfig on zero.
std::size_t n_draws(const SelectionConfig& cfg, std::size_t n_rows);

/// k indices without replacement: the k largest logit/temperature + Gumbel(0,1)
/// keys, in descending key order (ties broken by lower index). Consumes exactly
/// one Gumbel variate per logit, in index order.
std::vector<std::size_t> gumbel_topk(std::span<const double> logits, std::size_t k,
                                     std::uint64_t seed, double temperature = 1.0);

/// out[i] = M[i][i] + sum_{j masked} M[i][j] + sum_{j masked} M[j][i],
/// then out[i] -= C for masked i.
std::vector<double> conditional_scores(const LearnabilityMatrix& m, const SampledMask& mask,
                                       double large_constant);

/// Iterative joint example selection. Chunk z draws with substream
/// derive_seed(cfg.seed, z).
SelectionResult joint_select(const LearnabilityMatrix& m, const SelectionConfig& cfg);

/// Uniform sample of k of n indices without replacement (partial Fisher-Yates).
std::vector<std::size_t> iid_select(std::size_t n, std::size_t k, std::uint64_t seed);

/// Indices of the k largest diagonal entries, ties to the lower index.
std::vector<std::size_t> topk_individual_select(const LearnabilityMatrix& m, std::size_t k);

enum class Strategy { kJoint, kTopK, kIid };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view s);

/// Runs one strategy over a learnability matrix and fills a SelectionResult.
/// topk and iid pick n_chunks * n_draws indices (all in chunk 0); iid leaves
/// diag_scores empty.
SelectionResult select_sub_batch(Strategy strategy, const LearnabilityMatrix& m,
                                 const SelectionConfig& cfg);

}  // namespace jointsel
