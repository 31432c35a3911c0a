#include "jointsel/simlab.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "jointsel/rng.hpp"

namespace jointsel::simlab {

namespace {

// Substreams of spec.seed.
constexpr std::uint64_t kLatentStream = 1;
constexpr std::uint64_t kRefNoiseStream = 2;
constexpr std::uint64_t kLayoutStream = 3;
constexpr std::uint64_t kLearnerStream = 4;

void fill_unit_gaussian(Rng& rng, std::span<float> row) {
  do {
    for (auto& x : row) x = static_cast<float>(rng.normal());
  } while (!normalize_in_place(row));
}

void perturb_and_normalize(Rng& rng, std::span<const float> base, double sigma,
                           std::span<float> out) {
  do {
    for (std::size_t k = 0; k < base.size(); ++k) {
      out[k] = static_cast<float>(static_cast<double>(base[k]) + sigma * rng.normal());
    }
  } while (!normalize_in_place(out));
}

}  // namespace

void SyntheticCorpusSpec::validate() const {
  if (n_clean + n_noisy < 2) throw InvalidArgument("synthetic corpus needs at least 2 pairs");
  if (dim < 2) throw InvalidArgument("synthetic corpus needs dim >= 2");
  if (!(ref_noise_sigma >= 0.0) || !(learner_init_sigma >= 0.0)) {
    throw InvalidArgument("noise sigmas must be non-negative");
  }
  if (!(ref_noise_spread >= 0.0 && ref_noise_spread <= 1.0)) {
    throw InvalidArgument("ref_noise_spread must lie in [0, 1]");
  }
  if (!(antipodal_fraction >= 0.0 && antipodal_fraction <= 1.0)) {
    throw InvalidArgument("antipodal_fraction must lie in [0, 1]");
  }
}

std::vector<std::optional<bool>> SyntheticCorpus::noise_labels() const {
  std::vector<std::optional<bool>> labels;
  labels.reserve(pairs.size());
  for (const auto& p : pairs) labels.push_back(p.noise_label);
  return labels;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_clean + spec.n_noisy;
  const std::size_t dim = spec.dim;

  // Which rows are noisy: a seeded shuffle of the label vector.
  std::vector<bool> noisy(n, false);
  std::fill(noisy.begin(), noisy.begin() + static_cast<std::ptrdiff_t>(spec.n_noisy), true);
  Rng layout(derive_seed(spec.seed, kLayoutStream));
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(layout.uniform_below(i + 1));
    const bool t = noisy[i];
    noisy[i] = noisy[j];
    noisy[j] = t;
  }
  const auto n_antipodal =
      static_cast<std::size_t>(std::llround(spec.antipodal_fraction * static_cast<double>(spec.n_noisy)));

  SyntheticCorpus c;
  c.latent_src = Matrix(n, dim);
  c.latent_trg = Matrix(n, dim);
  c.ref_src = Matrix(n, dim);
  c.ref_trg = Matrix(n, dim);
  Rng latents(derive_seed(spec.seed, kLatentStream));
  Rng noise(derive_seed(spec.seed, kRefNoiseStream));
  std::size_t noisy_seen = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fill_unit_gaussian(latents, c.latent_src.row(i));
    if (!noisy[i]) {
      std::copy_n(c.latent_src.row(i).begin(), dim, c.latent_trg.row(i).begin());
    } else if (noisy_seen++ < n_antipodal) {
      for (std::size_t k = 0; k < dim; ++k) c.latent_trg(i, k) = -c.latent_src(i, k);
    } else {
      fill_unit_gaussian(latents, c.latent_trg.row(i));
    }
    const double sigma =
        spec.ref_noise_sigma *
        (1.0 + spec.ref_noise_spread * (2.0 * noise.uniform_open() - 1.0));
    perturb_and_normalize(noise, c.latent_src.row(i), sigma, c.ref_src.row(i));
    perturb_and_normalize(noise, c.latent_trg.row(i), sigma, c.ref_trg.row(i));

    const std::string tag = noisy[i] ? "noisy" : "clean";
    c.pairs.push_back(PairRecord::make(i, tag + " source sentence " + std::to_string(i),
                                       tag + " target sentence " + std::to_string(i),
                                       noisy[i]));
  }
  return c;
}

ToyLearnerState ToyLearnerState::initialize(const SyntheticCorpus& corpus,
                                            const SyntheticCorpusSpec& spec, double lr) {
  if (!(lr > 0.0 && lr <= 1.0)) throw InvalidArgument("learning rate must lie in (0, 1]");
  const std::size_t n = corpus.size();
  const std::size_t dim = corpus.latent_src.cols;
  ToyLearnerState s;
  s.src_table = Matrix(n, dim);
  s.trg_table = Matrix(n, dim);
  s.lr = lr;
  Rng rng(derive_seed(spec.seed, kLearnerStream));
  for (std::size_t i = 0; i < n; ++i) {
    perturb_and_normalize(rng, corpus.latent_src.row(i), spec.learner_init_sigma,
                          s.src_table.row(i));
    perturb_and_normalize(rng, corpus.latent_trg.row(i), spec.learner_init_sigma,
                          s.trg_table.row(i));
  }
  return s;
}

double ToyLearnerState::pair_similarity(PairId id) const {
  return dot(src_table.row(id), trg_table.row(id));
}

void toy_learner_update_in_place(ToyLearnerState& state, std::span<const PairId> selected) {
  const std::size_t n = state.src_table.rows;
  for (auto id : selected) {
    if (id >= n) throw UnknownId("pair id " + std::to_string(id) + " not in learner tables");
  }
  const std::size_t dim = state.src_table.cols;
  std::vector<float> src(dim);
  std::vector<float> trg(dim);
  for (auto id : selected) {
    auto s = state.src_table.row(id);
    auto t = state.trg_table.row(id);
    for (std::size_t k = 0; k < dim; ++k) {
      const double mid = 0.5 * (static_cast<double>(s[k]) + static_cast<double>(t[k]));
      src[k] = static_cast<float>(s[k] + state.lr * (mid - s[k]));
      trg[k] = static_cast<float>(t[k] + state.lr * (mid - t[k]));
    }
    // An exactly antipodal pair has no midpoint direction; leave it alone.
    if (normalize_in_place(src) && normalize_in_place(trg)) {
      std::copy(src.begin(), src.end(), s.begin());
      std::copy(trg.begin(), trg.end(), t.begin());
    }
  }
  ++state.step;
}

ToyLearnerState toy_learner_update(ToyLearnerState state, std::span<const PairId> selected) {
  toy_learner_update_in_place(state, selected);
  return state;
}

double alignment_metric(const ToyLearnerState& state, const SyntheticCorpus& corpus) {
  double sum = 0.0;
  std::size_t clean = 0;
  for (const auto& p : corpus.pairs) {
    if (p.noise_label.value_or(false)) continue;
    sum += state.pair_similarity(p.id);
    ++clean;
  }
  return clean > 0 ? sum / static_cast<double>(clean) : 0.0;
}

std::optional<std::uint64_t> LearningCurve::samples_to_reach(double threshold) const {
  for (const auto& p : points) {
    if (p.metric >= threshold) return p.samples;
  }
  return std::nullopt;
}

std::string to_csv(std::span<const LearningCurve> curves) {
  std::string out = "samples,metric,strategy,seed\n";
  char buf[128];
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof buf, "%llu,%.9f,", static_cast<unsigned long long>(p.samples),
                    p.metric);
      out += buf;
      out += c.strategy;
      out += ',';
      out += std::to_string(c.seed);
      out += '\n';
    }
  }
  return out;
}

void ExperimentSpec::validate() const {
  corpus.validate();
  selection.validate();
  if (!(lr > 0.0 && lr <= 1.0)) throw InvalidArgument("learning rate must lie in (0, 1]");
}

ExperimentSpec default_experiment_spec() {
  ExperimentSpec spec;
  spec.corpus.n_clean = 2000;
  spec.corpus.n_noisy = 500;
  spec.corpus.dim = 64;
  spec.corpus.ref_noise_sigma = 0.125;
  spec.corpus.ref_noise_spread = 0.9;
  spec.corpus.learner_init_sigma = 0.375;
  spec.selection.super_batch_size = 500;
  spec.selection.filter_ratio = 0.9;
  spec.selection.n_chunks = 4;
  spec.selection.weights = {0.8, 0.2};
  spec.lr = 1.0;
  return spec;
}

namespace {

template <typename T>
T number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw InvalidArgument("bad value '" + v + "' for " + key);
  }
  return out;
}

}  // namespace

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw InvalidArgument(std::string("cannot parse experiment spec: ") + e.what());
  }
  ExperimentSpec spec = default_experiment_spec();
  RunConfig sel;
  sel.selection = spec.selection;
  for (const auto& [section, entries] : tree) {
    for (const auto& [key, node] : entries) {
      const std::string k = section + "." + key;
      const std::string v = node.get_value<std::string>();
      if (section == "corpus") {
        auto& c = spec.corpus;
        if (key == "n_clean") c.n_clean = number<std::size_t>(k, v);
        else if (key == "n_noisy") c.n_noisy = number<std::size_t>(k, v);
        else if (key == "dim") c.dim = number<std::size_t>(k, v);
        else if (key == "ref_noise_sigma") c.ref_noise_sigma = number<double>(k, v);
        else if (key == "ref_noise_spread") c.ref_noise_spread = number<double>(k, v);
        else if (key == "learner_init_sigma") c.learner_init_sigma = number<double>(k, v);
        else if (key == "antipodal_fraction") c.antipodal_fraction = number<double>(k, v);
        else if (key == "seed") c.seed = number<std::uint64_t>(k, v);
        else throw InvalidArgument("unknown experiment key '" + k + "'");
      } else if (section == "learner") {
        if (key == "lr") spec.lr = number<double>(k, v);
        else if (key == "stop_at_metric") spec.stop_at_metric = number<double>(k, v);
        else throw InvalidArgument("unknown experiment key '" + k + "'");
      } else if (section == "selection") {
        set_config_value(sel, k, v);
      } else {
        throw InvalidArgument("unknown experiment section '" + section + "'");
      }
    }
  }
  spec.selection = sel.selection;
  spec.validate();
  return spec;
}

FunctionProvider reference_provider(const SyntheticCorpus& corpus) {
  return FunctionProvider(kReferenceModel, static_cast<std::uint32_t>(corpus.ref_src.cols),
                          [&corpus](const PairRecord& p, Side side, std::span<float> out) {
                            if (p.id >= corpus.size()) return false;
                            const auto row = side == Side::kSource ? corpus.ref_src.row(p.id)
                                                                   : corpus.ref_trg.row(p.id);
                            std::copy(row.begin(), row.end(), out.begin());
                            return true;
                          });
}

FunctionProvider learner_provider(const ToyLearnerState& state) {
  return FunctionProvider(kLearnerModel, static_cast<std::uint32_t>(state.src_table.cols),
                          [&state](const PairRecord& p, Side side, std::span<float> out) {
                            if (p.id >= state.src_table.rows) return false;
                            const auto row = side == Side::kSource ? state.src_table.row(p.id)
                                                                   : state.trg_table.row(p.id);
                            std::copy(row.begin(), row.end(), out.begin());
                            return true;
                          });
}

LearningCurve run_experiment(const ExperimentSpec& spec, Strategy strategy,
                             std::uint64_t budget_samples, std::uint64_t eval_every,
                             const SelectionObserver& observer, EmbeddingCache* cache) {
  spec.validate();
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec.corpus);
  ToyLearnerState state = ToyLearnerState::initialize(corpus, spec.corpus, spec.lr);

  LearningCurve curve;
  curve.strategy = std::string(strategy_name(strategy));
  curve.seed = spec.selection.seed;
  double metric = alignment_metric(state, corpus);
  curve.points.push_back({0, metric});
  if (budget_samples == 0) return curve;

  RunConfig cfg;
  cfg.selection = spec.selection;
  cfg.strategy = strategy;
  auto ref = reference_provider(corpus);
  auto learner = learner_provider(state);
  SelectionRun run(cfg, corpus.pairs, learner, ref, cache);

  std::uint64_t consumed = 0;
  std::uint64_t last_point = 0;
  auto sink = [&](const SuperBatch&, const SelectionResult&, const SelectionRecord& record) {
    if (observer) observer(record);
    toy_learner_update_in_place(state, record.selected_ids);
    consumed += record.selected_ids.size();
    metric = alignment_metric(state, corpus);
    const bool done = consumed >= budget_samples ||
                      (spec.stop_at_metric && metric >= *spec.stop_at_metric);
    if (done || consumed - last_point >= std::max<std::uint64_t>(eval_every, 1)) {
      curve.points.push_back({consumed, metric});
      last_point = consumed;
    }
    return !done;
  };
  for (std::size_t epoch = 0; run.run_epoch(epoch, sink); ++epoch) {
  }
  return curve;
}

double noise_exposure(std::span<const PairId> selected,
                      std::span<const std::optional<bool>> labels) {
  if (selected.empty()) return 0.0;
  std::size_t noisy = 0;
  for (auto id : selected) {
    if (id >= labels.size() || !labels[id].has_value()) {
      throw MissingLabel("no noise label for pair " + std::to_string(id));
    }
    if (*labels[id]) ++noisy;
  }
  return static_cast<double>(noisy) / static_cast<double>(selected.size());
}

}  // namespace jointsel::simlab
