#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jointsel/config.hpp"
#include "jointsel/core.hpp"
#include "jointsel/pipeline.hpp"
#include "jointsel/selector.hpp"

namespace jointsel::simlab {

inline const std::string kReferenceModel = "simlab-reference";
inline const std::string kLearnerModel = "simlab-learner";

/// Synthetic parallel corpus. Gaussian noise terms are per coordinate.
struct SyntheticCorpusSpec {
  std::size_t n_clean = 2000;
  std::size_t n_noisy = 500;
  std::size_t dim = 64;
  // Reference embeddings of a clean pair: normalize(z + N(0, sigma_i^2 I)) per
  // side, with sigma_i = ref_noise_sigma * (1 + ref_noise_spread * (2u - 1)),
  // u ~ U(0, 1). Spread 0 gives every pair the same noise level.
  double ref_noise_sigma = 0.125;
  double ref_noise_spread = 0.0;
  // Learner tables start at normalize(latent + N(0, learner_init_sigma^2 I)).
  double learner_init_sigma = 0.375;
  // Share of noisy pairs whose target latent is the negated source latent.
  double antipodal_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<PairRecord> pairs;  // pair id == row index
  Matrix ref_src;                 // unit-norm rows
  Matrix ref_trg;
  Matrix latent_src;              // ground truth
  Matrix latent_trg;

  std::size_t size() const { return pairs.size(); }
  std::vector<std::optional<bool>> noise_labels() const;
};

/// Clean pairs share one latent across sides; noisy pairs draw independent
/// latents. Noisy positions are scattered through the corpus. Deterministic in
/// spec.seed.
SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

struct ToyLearnerState {
  Matrix src_table;
  Matrix trg_table;
  std::uint64_t step = 0;
  double lr = 1.0;

  /// Tables drawn around the corpus latents with learner_init_sigma noise.
  static ToyLearnerState initialize(const SyntheticCorpus& corpus,
                                    const SyntheticCorpusSpec& spec, double lr);

  double pair_similarity(PairId id) const;
};

/// Pulls both sides of every selected pair toward their midpoint:
///   src <- normalize(src + lr * (mid - src)),  trg <- normalize(trg + lr * (mid - trg)).
/// lr = 1 lands both on the normalized midpoint. Throws UnknownId.
ToyLearnerState toy_learner_update(ToyLearnerState state, std::span<const PairId> selected);
void toy_learner_update_in_place(ToyLearnerState& state, std::span<const PairId> selected);

/// Mean diagonal learner similarity over clean pairs only.
double alignment_metric(const ToyLearnerState& state, const SyntheticCorpus& corpus);

struct LearningCurve {
  struct Point {
    std::uint64_t samples = 0;
    double metric = 0.0;
  };
  std::vector<Point> points;
  std::string strategy;
  std::uint64_t seed = 0;

  /// First sample count at which the metric reaches `threshold`.
  std::optional<std::uint64_t> samples_to_reach(double threshold) const;
};

std::string to_csv(std::span<const LearningCurve> curves);

struct ExperimentSpec {
  SyntheticCorpusSpec corpus;
  SelectionConfig selection;  // selection.seed drives super-batch order and draws
  double lr = 1.0;
  // Optional early stop once the alignment metric reaches this value.
  std::optional<double> stop_at_metric;

  void validate() const;
};

/// Default selection settings (filter 0.9, 4 chunks, w 0.8/0.2) on a 500-pair
/// super-batch, over 2000 clean + 500 noisy pairs.
ExperimentSpec default_experiment_spec();

/// Reads an INI spec with sections [corpus], [selection], [learner].
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

/// Observer for every sub-batch selected during an experiment.
using SelectionObserver = std::function<void(const SelectionRecord&)>;

/// Runs super-batch selection against the toy learner until `budget_samples`
/// selected samples have been trained (or the early-stop metric is reached).
/// A curve point is recorded at 0 and whenever at least `eval_every` samples
/// have accumulated since the previous point, and at the end.
LearningCurve run_experiment(const ExperimentSpec& spec, Strategy strategy,
                             std::uint64_t budget_samples, std::uint64_t eval_every,
                             const SelectionObserver& observer = {},
                             EmbeddingCache* cache = nullptr);

/// Share of selected ids that are labelled noisy. Throws MissingLabel.
double noise_exposure(std::span<const PairId> selected,
                      std::span<const std::optional<bool>> labels);

/// Providers that serve a synthetic corpus to the regular pipeline.
FunctionProvider reference_provider(const SyntheticCorpus& corpus);
FunctionProvider learner_provider(const ToyLearnerState& state);

}  // namespace jointsel::simlab
