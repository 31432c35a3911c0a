#include "jointsel/pipeline.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "jointsel/rng.hpp"

namespace jointsel {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

ShardFileProvider::ShardFileProvider(const std::filesystem::path& dir, std::string model_id)
    : model_id_(std::move(model_id)), store_(EmbeddingCache::open(dir, /*read_only=*/true)) {
  const auto dim = store_.model_dim(model_id_);
  if (!dim) {
    throw InvalidArgument("no shards for model '" + model_id_ + "' in '" + dir.string() + "'");
  }
  dim_ = *dim;
}

bool ShardFileProvider::embed(const PairRecord& pair, Side side, std::span<float> out) {
  auto v = store_.get(CacheKey{model_id_, pair.hash(side)});
  if (!v) return false;
  std::copy(v->begin(), v->end(), out.begin());
  return true;
}

ReferenceResolver::ReferenceResolver(EmbeddingProvider* provider, EmbeddingCache* cache)
    : provider_(provider), cache_(cache) {
  if (provider_ == nullptr) throw InvalidArgument("reference resolver needs a provider");
  model_id_ = provider_->model_id();
  dim_ = provider_->dim();
  if (cache_ != nullptr) cache_->register_model(model_id_, dim_);
}

EmbeddingMatrix ReferenceResolver::resolve(std::span<const PairRecord> pairs, Side side) {
  Matrix rows(pairs.size(), dim_);
  std::vector<PairId> ids;
  ids.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ids.push_back(pairs[i].id);
    const CacheKey key{model_id_, pairs[i].hash(side)};
    if (cache_ != nullptr) {
      if (auto v = cache_->get(key)) {
        std::copy(v->begin(), v->end(), rows.row(i).begin());
        continue;
      }
    }
    auto out = rows.row(i);
    if (!provider_->embed(pairs[i], side, out)) throw MissingEmbedding(pairs[i].id, model_id_);
    ++provider_calls_;
    if (!normalize_in_place(out)) throw ZeroVectorRow(i);
    if (cache_ != nullptr) cache_->put(key, out);
  }
  return EmbeddingMatrix(model_id_, side, std::move(rows), std::move(ids));
}

EmbeddingMatrix embed_learner(EmbeddingProvider& provider, std::span<const PairRecord> pairs,
                              Side side) {
  Matrix rows(pairs.size(), provider.dim());
  std::vector<PairId> ids;
  ids.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ids.push_back(pairs[i].id);
    if (!provider.embed(pairs[i], side, rows.row(i))) {
      throw MissingEmbedding(pairs[i].id, provider.model_id());
    }
  }
  return normalize_rows(rows, provider.model_id(), side, std::move(ids));
}

// ---------------------------------------------------------------------------
// Super-batches
// ---------------------------------------------------------------------------

std::vector<std::size_t> epoch_order(std::size_t corpus_size, std::uint64_t seed,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (epoch == 0 || corpus_size < 2) return order;
  Rng rng(derive_seed(derive_seed(seed, 0x5eed0f0e9c0ULL), epoch));
  for (std::size_t i = corpus_size - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_below(i + 1))]);
  }
  return order;
}

SuperBatchAssembler::SuperBatchAssembler(std::span<const PairRecord> corpus,
                                         std::vector<std::size_t> order, std::size_t size,
                                         EmbeddingProvider& learner,
                                         ReferenceResolver& reference,
                                         std::uint64_t first_ordinal)
    : corpus_(corpus),
      order_(std::move(order)),
      size_(size),
      learner_(learner),
      reference_(reference),
      ordinal_(first_ordinal) {
  if (size_ == 0) throw InvalidArgument("super-batch size must be positive");
}

std::optional<SuperBatch> SuperBatchAssembler::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), pos_ + size_);
  std::vector<PairRecord> pairs;
  pairs.reserve(end - pos_);
  for (std::size_t k = pos_; k < end; ++k) pairs.push_back(corpus_[order_[k]]);
  pos_ = end;
  auto learner_src = embed_learner(learner_, pairs, Side::kSource);
  auto learner_trg = embed_learner(learner_, pairs, Side::kTarget);
  auto ref_src = reference_.resolve(pairs, Side::kSource);
  auto ref_trg = reference_.resolve(pairs, Side::kTarget);
  return SuperBatch{ordinal_++,           std::move(pairs),   std::move(learner_src),
                    std::move(learner_trg), std::move(ref_src), std::move(ref_trg)};
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

std::string to_jsonl(const SelectionRecord& r) {
  ordered_json j;
  j["super_batch_ordinal"] = r.super_batch_ordinal;
  j["selected_ids"] = r.selected_ids;
  j["chunk_of"] = r.chunk_of;
  if (!r.diag_scores.empty()) j["diag_scores"] = r.diag_scores;  // iid has none
  j["seed"] = r.seed;
  if (!r.src_texts.empty()) {
    j["src"] = r.src_texts;
    j["trg"] = r.trg_texts;
  }
  return j.dump();
}

SelectionRecord selection_record_from_jsonl(const std::string& line) {
  const auto j = json::parse(line);
  SelectionRecord r;
  r.super_batch_ordinal = j.at("super_batch_ordinal").get<std::uint64_t>();
  r.selected_ids = j.at("selected_ids").get<std::vector<PairId>>();
  r.chunk_of = j.at("chunk_of").get<std::vector<std::size_t>>();
  if (j.contains("diag_scores")) r.diag_scores = j.at("diag_scores").get<std::vector<float>>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("src")) {
    r.src_texts = j.at("src").get<std::vector<std::string>>();
    r.trg_texts = j.at("trg").get<std::vector<std::string>>();
  }
  return r;
}

// ---------------------------------------------------------------------------
// FLOPS accounting
// ---------------------------------------------------------------------------

RunReport flops_report(const RunCounters& c, const CostModel& cost,
                       std::uint64_t iid_samples_for_parity) {
  cost.validate();
  RunReport r;
  r.counters = c;
  r.samples_trained = c.samples_trained;
  r.super_batches = c.super_batches;
  r.total_flops = cost.reference_fwd_flops_per_sample * c.reference_forwards +
                  cost.learner_fwd_flops_per_sample * static_cast<double>(c.pairs_scored) +
                  cost.train_flops_per_sample() * static_cast<double>(c.samples_trained) +
                  c.scoring_flops;
  const double iid = cost.train_flops_per_sample() * static_cast<double>(iid_samples_for_parity);
  r.flops_relative_to_iid = iid > 0.0 ? r.total_flops / iid : 0.0;
  return r;
}

namespace {

ordered_json histogram_json(const ScoreHistogram& h) {
  ordered_json j;
  j["edges"] = h.bin_edges;
  j["counts"] = h.counts;
  j["mean"] = h.mean;
  j["variance"] = h.variance;
  return j;
}

}  // namespace

std::string to_json(const RunReport& r) {
  ordered_json j;
  j["samples_trained"] = r.samples_trained;
  j["super_batches"] = r.super_batches;
  j["total_flops"] = r.total_flops;
  j["flops_relative_to_iid"] = r.flops_relative_to_iid;
  j["cache_stats"] = {{"hits", r.cache_stats.hits},
                      {"misses", r.cache_stats.misses},
                      {"stored_vectors", r.cache_stats.stored_vectors},
                      {"bytes_on_disk", r.cache_stats.bytes_on_disk}};
  j["counters"] = {{"super_batches", r.counters.super_batches},
                   {"pairs_scored", r.counters.pairs_scored},
                   {"samples_trained", r.counters.samples_trained},
                   {"reference_forwards", r.counters.reference_forwards},
                   {"scoring_flops", r.counters.scoring_flops},
                   {"passthrough_tails", r.counters.passthrough_tails}};
  ordered_json hs = ordered_json::object();
  for (const auto& [model, h] : r.histograms) hs[model] = histogram_json(h);
  j["histograms"] = hs;
  return j.dump(2);
}

RunReport run_report_from_json(const std::string& text) {
  const auto j = json::parse(text);
  RunReport r;
  r.samples_trained = j.at("samples_trained").get<std::uint64_t>();
  r.super_batches = j.at("super_batches").get<std::uint64_t>();
  r.total_flops = j.at("total_flops").get<double>();
  r.flops_relative_to_iid = j.at("flops_relative_to_iid").get<double>();
  const auto& cs = j.at("cache_stats");
  r.cache_stats = {cs.at("hits").get<std::uint64_t>(), cs.at("misses").get<std::uint64_t>(),
                   cs.at("stored_vectors").get<std::uint64_t>(),
                   cs.at("bytes_on_disk").get<std::uint64_t>()};
  const auto& c = j.at("counters");
  r.counters.super_batches = c.at("super_batches").get<std::uint64_t>();
  r.counters.pairs_scored = c.at("pairs_scored").get<std::uint64_t>();
  r.counters.samples_trained = c.at("samples_trained").get<std::uint64_t>();
  r.counters.reference_forwards = c.at("reference_forwards").get<double>();
  r.counters.scoring_flops = c.at("scoring_flops").get<double>();
  r.counters.passthrough_tails = c.at("passthrough_tails").get<std::uint64_t>();
  for (const auto& [model, h] : j.at("histograms").items()) {
    ScoreHistogram hist;
    hist.bin_edges = h.at("edges").get<std::vector<double>>();
    hist.counts = h.at("counts").get<std::vector<std::uint64_t>>();
    hist.mean = h.at("mean").get<double>();
    hist.variance = h.at("variance").get<double>();
    r.histograms[model] = std::move(hist);
  }
  return r;
}

std::string render_report(const RunReport& r) {
  std::ostringstream os;
  os << "super-batches          " << r.super_batches << "\n"
     << "samples trained        " << r.samples_trained << "\n"
     << "pairs scored           " << r.counters.pairs_scored << "\n"
     << "reference forwards     " << r.counters.reference_forwards << "\n"
     << "total FLOPs            " << r.total_flops << "\n"
     << "FLOPs relative to iid  " << r.flops_relative_to_iid << "\n"
     << "cache hits/misses      " << r.cache_stats.hits << " / " << r.cache_stats.misses << "\n"
     << "cache vectors          " << r.cache_stats.stored_vectors << " ("
     << r.cache_stats.bytes_on_disk << " bytes)\n";
  for (const auto& [model, h] : r.histograms) {
    os << "diagonal similarity [" << model << "]  mean " << h.mean << "  variance "
       << h.variance << "  n " << h.total() << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

SelectionRun::SelectionRun(const RunConfig& cfg, std::span<const PairRecord> corpus,
                           EmbeddingProvider& learner, EmbeddingProvider& reference,
                           EmbeddingCache* cache)
    : cfg_(cfg),
      corpus_(corpus),
      learner_(learner),
      reference_(&reference, cache),
      cache_(cache),
      learner_hist_(cfg.io.histogram_bins),
      reference_hist_(cfg.io.histogram_bins) {
  cfg_.selection.validate();
  cfg_.cost.validate();
}

SelectionResult SelectionRun::select(const SuperBatch& batch, const LearnabilityMatrix& m,
                                     std::uint64_t seed) {
  SelectionConfig sc = cfg_.selection;
  sc.seed = seed;
  try {
    return select_sub_batch(cfg_.strategy, m, sc);
  } catch (const DegenerateConfig&) {
    // Tail too small to select from: pass every pair through.
    ++counters_.passthrough_tails;
    SelectionResult all;
    all.selected.resize(batch.pairs.size());
    std::iota(all.selected.begin(), all.selected.end(), std::size_t{0});
    all.chunk_of.assign(all.selected.size(), 0);
    if (cfg_.strategy != Strategy::kIid) all.diag_scores = m.diagonal();
    return all;
  }
}

bool SelectionRun::run_epoch(std::size_t epoch, const Sink& sink) {
  SuperBatchAssembler assembler(corpus_, epoch_order(corpus_.size(), cfg_.selection.seed, epoch),
                                cfg_.selection.super_batch_size, learner_, reference_,
                                next_ordinal_);
  // Reference embeddings resolve while the assembler builds each batch.
  std::uint64_t ref_calls_seen = reference_.provider_calls();
  while (auto batch = assembler.next()) {
    next_ordinal_ = batch->ordinal + 1;
    const auto sim_learner = similarity_matrix(batch->learner_src, batch->learner_trg);
    const auto sim_ref = similarity_matrix(batch->ref_src, batch->ref_trg);
    learner_hist_.add(diagonal(sim_learner));
    reference_hist_.add(diagonal(sim_ref));
    const auto m = learnability_matrix(sim_learner, sim_ref, cfg_.selection.weights);

    const std::uint64_t seed = derive_seed(cfg_.selection.seed, batch->ordinal);
    const SelectionResult result = select(*batch, m, seed);

    const std::size_t n = batch->pairs.size();
    ++counters_.super_batches;
    counters_.pairs_scored += n;
    counters_.samples_trained += result.selected.size();
    counters_.reference_forwards +=
        static_cast<double>(reference_.provider_calls() - ref_calls_seen) / 2.0;
    ref_calls_seen = reference_.provider_calls();
    counters_.scoring_flops +=
        CostModel::scoring_flops(n, batch->learner_src.dim(), batch->ref_src.dim());

    SelectionRecord record;
    record.super_batch_ordinal = batch->ordinal;
    record.seed = seed;
    record.chunk_of = result.chunk_of;
    record.diag_scores = result.diag_scores;
    for (auto i : result.selected) {
      record.selected_ids.push_back(batch->pairs[i].id);
      if (cfg_.io.emit_text) {
        record.src_texts.push_back(batch->pairs[i].src_text);
        record.trg_texts.push_back(batch->pairs[i].trg_text);
      }
    }
    if (!sink(*batch, result, record)) return false;
  }
  return true;
}

void SelectionRun::run(const Sink& sink) {
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    if (!run_epoch(e, sink)) return;
  }
}

void SelectionRun::score_epoch(std::size_t epoch) {
  SuperBatchAssembler assembler(corpus_, epoch_order(corpus_.size(), cfg_.selection.seed, epoch),
                                cfg_.selection.super_batch_size, learner_, reference_,
                                next_ordinal_);
  // Reference embeddings resolve while the assembler builds each batch.
  std::uint64_t ref_calls_seen = reference_.provider_calls();
  while (auto batch = assembler.next()) {
    next_ordinal_ = batch->ordinal + 1;
    const auto sim_learner = similarity_matrix(batch->learner_src, batch->learner_trg);
    const auto sim_ref = similarity_matrix(batch->ref_src, batch->ref_trg);
    learner_hist_.add(diagonal(sim_learner));
    reference_hist_.add(diagonal(sim_ref));
    ++counters_.super_batches;
    counters_.pairs_scored += batch->pairs.size();
    counters_.reference_forwards +=
        static_cast<double>(reference_.provider_calls() - ref_calls_seen) / 2.0;
    ref_calls_seen = reference_.provider_calls();
    counters_.scoring_flops += CostModel::scoring_flops(
        batch->pairs.size(), batch->learner_src.dim(), batch->ref_src.dim());
  }
}

RunReport SelectionRun::report() const {
  const std::uint64_t parity = cfg_.iid_samples_for_parity > 0 ? cfg_.iid_samples_for_parity
                                                               : counters_.samples_trained;
  RunReport r = flops_report(counters_, cfg_.cost, parity);
  if (cache_ != nullptr) r.cache_stats = cache_->stats();
  r.histograms[learner_.model_id()] = learner_hist_.finish();
  r.histograms[reference_.model_id()] = reference_hist_.finish();
  return r;
}

}  // namespace jointsel
