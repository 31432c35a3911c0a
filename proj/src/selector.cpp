#include "jointsel/selector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "jointsel/rng.hpp"

namespace jointsel {

void SampledMask::set(std::size_t i) {
  if (!flags_.at(i)) {
    flags_[i] = true;
    ++count_;
  }
}

void SampledMask::set(std::span<const std::size_t> indices) {
  for (auto i : indices) set(i);
}

std::size_t n_draws(const SelectionConfig& cfg, std::size_t n_rows) {
  if (cfg.n_chunks == 0) throw InvalidArgument("n_chunks must be positive");
  // The epsilon absorbs representation error, e.g. 4000 * (1 - 0.9) / 4 evaluates
  // to 99.99999999999999 in binary floating point.
  const double draws = std::floor(static_cast<double>(n_rows) * (1.0 - cfg.filter_ratio) /
                                      static_cast<double>(cfg.n_chunks) +
                                  1e-9);
  if (draws < 1.0) {
    throw DegenerateConfig("no draws per chunk for " + std::to_string(n_rows) +
                           " rows, filter ratio " + std::to_string(cfg.filter_ratio) + ", " +
                           std::to_string(cfg.n_chunks) + " chunks");
  }
  return static_cast<std::size_t>(draws);
}

std::vector<std::size_t> gumbel_topk(std::span<const double> logits, std::size_t k,
                                     std::uint64_t seed, double temperature) {
  if (k > logits.size()) {
    throw KTooLarge("cannot draw " + std::to_string(k) + " of " +
                    std::to_string(logits.size()) + " items");
  }
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  Rng rng(seed);
  std::vector<double> keys(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) {
      throw InvalidArgument("non-finite logit at index " + std::to_string(i));
    }
    keys[i] = logits[i] / temperature + rng.gumbel();
  }
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return keys[a] > keys[b] || (keys[a] == keys[b] && a < b);
                    });
  order.resize(k);
  return order;
}

std::vector<double> conditional_scores(const LearnabilityMatrix& m, const SampledMask& mask,
                                       double large_constant) {
  if (m.n != mask.n()) {
    throw DimensionMismatch("mask has " + std::to_string(mask.n()) + " entries for a " +
                            std::to_string(m.n) + "-row matrix");
  }
  const std::size_t n = m.n;
  std::vector<double> row_sums(n, 0.0);
  std::vector<double> col_sums(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    for (std::size_t i = 0; i < n; ++i) {
      row_sums[i] += m(i, j);
      col_sums[i] += m(j, i);
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<double>(m(i, i)) + row_sums[i] + col_sums[i];
    if (mask[i]) out[i] -= large_constant;
  }
  return out;
}

SelectionResult joint_select(const LearnabilityMatrix& m, const SelectionConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t draws = n_draws(cfg, m.n);
  if (draws * cfg.n_chunks > m.n) {
    throw KTooLarge("selection larger than super-batch");
  }

  SelectionResult result;
  result.selected.reserve(draws * cfg.n_chunks);
  result.chunk_of.reserve(draws * cfg.n_chunks);

  const std::vector<float> diag = m.diagonal();
  std::vector<double> logits(m.n, 0.0);
  if (cfg.chunk0_policy == Chunk0Policy::kWeighted) {
    std::copy(diag.begin(), diag.end(), logits.begin());
  }
  auto append = [&](const std::vector<std::size_t>& picked, std::size_t chunk) {
    for (auto i : picked) {
      result.selected.push_back(i);
      result.chunk_of.push_back(chunk);
    }
  };
  append(gumbel_topk(logits, draws, derive_seed(cfg.seed, 0), cfg.temperature), 0);

  SampledMask mask(m.n);
  for (std::size_t z = 1; z < cfg.n_chunks; ++z) {
    mask.set(result.selected);
    logits = conditional_scores(m, mask, cfg.large_constant);
    result.counters.score_flops += 4ULL * m.n * mask.count();
    append(gumbel_topk(logits, draws, derive_seed(cfg.seed, z), cfg.temperature), z);
  }

  result.diag_scores.reserve(result.selected.size());
  for (auto i : result.selected) result.diag_scores.push_back(diag[i]);
  result.counters.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<std::size_t> iid_select(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) {
    throw KTooLarge("cannot draw " + std::to_string(k) + " of " + std::to_string(n) + " items");
  }
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(n - i));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(k);
  return perm;
}

std::vector<std::size_t> topk_individual_select(const LearnabilityMatrix& m, std::size_t k) {
  if (k > m.n) {
    throw KTooLarge("cannot draw " + std::to_string(k) + " of " + std::to_string(m.n) +
                    " items");
  }
  const std::vector<float> diag = m.diagonal();
  std::vector<std::size_t> order(m.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return diag[a] > diag[b]; });
  order.resize(k);
  return order;
}

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kJoint:
      return "joint";
    case Strategy::kTopK:
      return "topk";
    case Strategy::kIid:
      return "iid";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "joint") return Strategy::kJoint;
  if (s == "topk") return Strategy::kTopK;
  if (s == "iid") return Strategy::kIid;
  throw InvalidArgument("unknown strategy '" + std::string(s) + "'");
}

SelectionResult select_sub_batch(Strategy strategy, const LearnabilityMatrix& m,
                                 const SelectionConfig& cfg) {
  if (strategy == Strategy::kJoint) return joint_select(m, cfg);

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t k = n_draws(cfg, m.n) * cfg.n_chunks;
  SelectionResult result;
  if (strategy == Strategy::kIid) {
    result.selected = iid_select(m.n, k, derive_seed(cfg.seed, 0));
  } else {
    result.selected = topk_individual_select(m, k);
    const std::vector<float> diag = m.diagonal();
    for (auto i : result.selected) result.diag_scores.push_back(diag[i]);
  }
  result.chunk_of.assign(result.selected.size(), 0);
  result.counters.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace jointsel
