#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "jointsel/core.hpp"
#include "jointsel/corpus.hpp"
#include "jointsel/selector.hpp"

namespace jointsel {

/// Per-sample FLOP constants. A sample is one sentence pair (both sides).
struct CostModel {
  double learner_fwd_flops_per_sample = 0.0;
  double learner_bwd_flops_per_sample = 0.0;
  double reference_fwd_flops_per_sample = 0.0;

  /// 2 * n^2 * (d_learn + d_ref): the two n x n similarity products.
  static double scoring_flops(std::size_t n, std::size_t d_learn, std::size_t d_ref);
  double train_flops_per_sample() const {
    return learner_fwd_flops_per_sample + learner_bwd_flops_per_sample;
  }
  void validate() const;
};

struct ModelsConfig {
  std::string learner_id = "learner";
  std::string reference_id = "reference";
  // Directories of shard files (same format as the cache) holding precomputed
  // embeddings, e.g. written by an offline exporter.
  std::filesystem::path learner_embeddings;
  std::filesystem::path reference_embeddings;
};

struct CacheConfig {
  bool enabled = true;
  std::filesystem::path dir;
};

struct IoConfig {
  std::filesystem::path corpus;
  std::filesystem::path corpus_trg;  // moses format only
  CorpusFormat format = CorpusFormat::kTsv;
  std::filesystem::path out;
  std::filesystem::path report;
  std::size_t histogram_bins = 40;
  bool emit_text = false;
  // Micro-batch size for the downstream trainer; carried into the report only.
  std::size_t train_chunk = 32;
};

struct RunConfig {
  SelectionConfig selection;
  Strategy strategy = Strategy::kJoint;
  std::size_t epochs = 1;
  ModelsConfig models;
  CacheConfig cache;
  CostModel cost;
  // Samples the iid baseline needs for parity; 0 = use samples_trained.
  std::uint64_t iid_samples_for_parity = 0;
  IoConfig io;
};

/// Reads an INI-style file with sections [selection], [models], [cache],
/// [cost], [io]. Unknown keys are rejected.
RunConfig load_config(const std::filesystem::path& path);

/// Sets one "section.key" entry from its string form.
void set_config_value(RunConfig& cfg, std::string_view dotted_key, const std::string& value);

}  // namespace jointsel
