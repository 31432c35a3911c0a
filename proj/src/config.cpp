#include "jointsel/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>

namespace jointsel {

double CostModel::scoring_flops(std::size_t n, std::size_t d_learn, std::size_t d_ref) {
  const double nn = static_cast<double>(n);
  return 2.0 * nn * nn * static_cast<double>(d_learn + d_ref);
}

void CostModel::validate() const {
  for (double v : {learner_fwd_flops_per_sample, learner_bwd_flops_per_sample,
                   reference_fwd_flops_per_sample}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("cost constants must be finite and non-negative");
    }
  }
}

namespace {

template <typename T>
T parse_number(std::string_view key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw InvalidArgument("bad value '" + value + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw InvalidArgument("bad boolean '" + value + "' for " + std::string(key));
}

}  // namespace

void set_config_value(RunConfig& cfg, std::string_view k, const std::string& v) {
  auto& sel = cfg.selection;
  if (k == "selection.super_batch") {
    sel.super_batch_size = parse_number<std::size_t>(k, v);
  } else if (k == "selection.filter_ratio") {
    sel.filter_ratio = parse_number<double>(k, v);
  } else if (k == "selection.chunks") {
    sel.n_chunks = parse_number<std::size_t>(k, v);
  } else if (k == "selection.w_easy") {
    sel.weights.w_easy = parse_number<double>(k, v);
  } else if (k == "selection.w_hard") {
    sel.weights.w_hard = parse_number<double>(k, v);
  } else if (k == "selection.large_constant") {
    sel.large_constant = parse_number<double>(k, v);
  } else if (k == "selection.seed") {
    sel.seed = parse_number<std::uint64_t>(k, v);
  } else if (k == "selection.temperature") {
    sel.temperature = parse_number<double>(k, v);
  } else if (k == "selection.chunk0_policy") {
    sel.chunk0_policy = parse_chunk0_policy(v);
  } else if (k == "selection.strategy") {
    cfg.strategy = parse_strategy(v);
  } else if (k == "selection.epochs") {
    cfg.epochs = parse_number<std::size_t>(k, v);
  } else if (k == "models.learner_id") {
    cfg.models.learner_id = v;
  } else if (k == "models.reference_id") {
    cfg.models.reference_id = v;
  } else if (k == "models.learner_embeddings") {
    cfg.models.learner_embeddings = v;
  } else if (k == "models.reference_embeddings") {
    cfg.models.reference_embeddings = v;
  } else if (k == "cache.enabled") {
    cfg.cache.enabled = parse_bool(k, v);
  } else if (k == "cache.dir") {
    cfg.cache.dir = v;
  } else if (k == "cost.learner_fwd") {
    cfg.cost.learner_fwd_flops_per_sample = parse_number<double>(k, v);
  } else if (k == "cost.learner_bwd") {
    cfg.cost.learner_bwd_flops_per_sample = parse_number<double>(k, v);
  } else if (k == "cost.reference_fwd") {
    cfg.cost.reference_fwd_flops_per_sample = parse_number<double>(k, v);
  } else if (k == "cost.iid_samples_for_parity") {
    cfg.iid_samples_for_parity = parse_number<std::uint64_t>(k, v);
  } else if (k == "io.corpus") {
    cfg.io.corpus = v;
  } else if (k == "io.corpus_trg") {
    cfg.io.corpus_trg = v;
  } else if (k == "io.format") {
    cfg.io.format = parse_corpus_format(v);
  } else if (k == "io.out") {
    cfg.io.out = v;
  } else if (k == "io.report") {
    cfg.io.report = v;
  } else if (k == "io.histogram_bins") {
    cfg.io.histogram_bins = parse_number<std::size_t>(k, v);
  } else if (k == "io.emit_text") {
    cfg.io.emit_text = parse_bool(k, v);
  } else if (k == "io.train_chunk") {
    cfg.io.train_chunk = parse_number<std::size_t>(k, v);
  } else {
    throw InvalidArgument("unknown config key '" + std::string(k) + "'");
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw InvalidArgument(std::string("cannot parse config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, entries] : tree) {
    if (entries.empty()) {
      throw InvalidArgument("config key '" + section + "' must live in a section");
    }
    for (const auto& [key, node] : entries) {
      set_config_value(cfg, section + "." + key, node.get_value<std::string>());
    }
  }
  return cfg;
}

}  // namespace jointsel
