// jointsel command line: select, score, cache, report, simlab.

#include <algorithm>
#include <deque>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "jointsel/cache.hpp"
#include "jointsel/config.hpp"
#include "jointsel/corpus.hpp"
#include "jointsel/pipeline.hpp"
#include "jointsel/simlab.hpp"

using namespace jointsel;

namespace {

// Flags shared by select and score. Each one overrides its config key.
struct RunFlags {
  std::string config;
  std::vector<std::string> sets;  // raw "section.key=value"

  void attach(CLI::App* app) {
    app->add_option("--config", config, "INI config file")->check(CLI::ExistingFile);
    bind(app, "--strategy", "selection.strategy", "joint|topk|iid");
    bind(app, "--seed", "selection.seed", "run seed");
    bind(app, "--super-batch", "selection.super_batch", "super-batch size");
    bind(app, "--filter-ratio", "selection.filter_ratio", "fraction discarded");
    bind(app, "--chunks", "selection.chunks", "number of chunks");
    bind(app, "--w-easy", "selection.w_easy", "reference weight");
    bind(app, "--w-hard", "selection.w_hard", "learner weight");
    bind(app, "--chunk0-policy", "selection.chunk0_policy", "weighted|uniform");
    bind(app, "--temperature", "selection.temperature", "Gumbel temperature");
    bind(app, "--epochs", "selection.epochs", "passes over the corpus");
    bind(app, "--cache-dir", "cache.dir", "embedding cache directory");
    bind(app, "--corpus", "io.corpus", "corpus file (tsv, or source side for moses)");
    bind(app, "--corpus-trg", "io.corpus_trg", "target side for moses format");
    bind(app, "--format", "io.format", "tsv|moses");
    bind(app, "--learner-embeddings", "models.learner_embeddings", "learner shard directory");
    bind(app, "--reference-embeddings", "models.reference_embeddings",
         "reference shard directory");
    bind(app, "--out", "io.out", "output path");
    bind(app, "--report", "io.report", "report JSON path");
    app->add_flag("--no-cache", no_cache, "disable the embedding cache");
    app->add_flag("--emit-text", emit_text, "include sentence texts in records");
    app->add_option("--set", sets, "override any config key: section.key=value");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_config(config);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw InvalidArgument("--set expects section.key=value");
      set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : values) {
      if (value) set_config_value(cfg, key, *value);
    }
    if (no_cache) cfg.cache.enabled = false;
    if (emit_text) cfg.io.emit_text = true;
    return cfg;
  }

 private:
  void bind(CLI::App* app, const std::string& flag, const std::string& key,
            const std::string& help) {
    auto& slot = values.emplace_back(key, std::nullopt);
    app->add_option(flag, slot.second, help);
  }

  // deque keeps element addresses stable for CLI11's bound references.
  std::deque<std::pair<std::string, std::optional<std::string>>> values;
  bool no_cache = false;
  bool emit_text = false;
};

struct Inputs {
  Corpus corpus;
  std::unique_ptr<ShardFileProvider> learner;
  std::unique_ptr<ShardFileProvider> reference;
  std::optional<EmbeddingCache> cache;
};

Inputs open_inputs(const RunConfig& cfg) {
  if (cfg.io.corpus.empty()) throw InvalidArgument("no corpus given (io.corpus / --corpus)");
  if (cfg.models.learner_embeddings.empty() || cfg.models.reference_embeddings.empty()) {
    throw InvalidArgument("learner and reference embedding directories are required");
  }
  Inputs in;
  in.corpus = ingest_corpus(cfg.io.corpus, cfg.io.format, cfg.io.corpus_trg);
  if (in.corpus.skipped > 0) {
    std::cerr << "skipped " << in.corpus.skipped << " malformed line(s)\n";
  }
  in.learner = std::make_unique<ShardFileProvider>(cfg.models.learner_embeddings,
                                                   cfg.models.learner_id);
  in.reference = std::make_unique<ShardFileProvider>(cfg.models.reference_embeddings,
                                                     cfg.models.reference_id);
  if (cfg.cache.enabled && !cfg.cache.dir.empty()) {
    in.cache.emplace(EmbeddingCache::open(cfg.cache.dir));
  }
  return in;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidArgument("cannot write '" + path.string() + "'");
  f << text;
}

int cmd_select(const RunFlags& flags) {
  const RunConfig cfg = flags.resolve();
  Inputs in = open_inputs(cfg);
  SelectionRun run(cfg, in.corpus.pairs, *in.learner, *in.reference,
                   in.cache ? &*in.cache : nullptr);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!cfg.io.out.empty()) {
    file.open(cfg.io.out, std::ios::binary | std::ios::trunc);
    if (!file) throw InvalidArgument("cannot write '" + cfg.io.out.string() + "'");
    out = &file;
  }
  run.run([&](const SuperBatch&, const SelectionResult&, const SelectionRecord& rec) {
    *out << to_jsonl(rec) << '\n';
    return true;
  });
  out->flush();
  const RunReport report = run.report();
  if (!cfg.io.report.empty()) write_text(cfg.io.report, to_json(report) + "\n");
  std::cerr << render_report(report);
  return 0;
}

int cmd_score(const RunFlags& flags) {
  const RunConfig cfg = flags.resolve();
  Inputs in = open_inputs(cfg);
  SelectionRun run(cfg, in.corpus.pairs, *in.learner, *in.reference,
                   in.cache ? &*in.cache : nullptr);
  for (std::size_t e = 0; e < cfg.epochs; ++e) run.score_epoch(e);
  const RunReport report = run.report();
  std::string lines;
  for (const auto& [model, h] : report.histograms) lines += histogram_to_jsonl(h, model) + "\n";
  write_text(cfg.io.out, lines);
  if (!cfg.io.report.empty()) write_text(cfg.io.report, to_json(report) + "\n");
  return 0;
}

void print_shard(const ShardReport& s) {
  std::cout << s.path.string() << ": model=" << s.model_id << " dim=" << s.dim
            << " records=" << s.records << " checksum_failures=" << s.checksum_failures
            << " trailing_bytes=" << s.trailing_bytes
            << (s.header_ok ? "" : " BAD_HEADER") << "\n";
}

int cmd_cache_verify(const std::string& dir, const std::vector<std::string>& files) {
  VerifyReport report;
  if (!dir.empty()) {
    // Scan files directly: a store refuses to open on a damaged header.
    std::vector<std::filesystem::path> shards;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == shard::kExtension) {
        shards.push_back(e.path());
      }
    }
    std::sort(shards.begin(), shards.end());
    for (const auto& p : shards) report.shards.push_back(verify_shard(p));
  }
  for (const auto& f : files) report.shards.push_back(verify_shard(f));
  for (const auto& s : report.shards) print_shard(s);
  std::cout << "records " << report.records() << ", failures " << report.failures() << "\n";
  return report.ok() ? 0 : 1;
}

int cmd_cache_compact(const std::string& dir) {
  auto cache = EmbeddingCache::open(dir);
  const CompactReport r = cache.compact();
  std::cout << "kept " << r.kept << ", dropped duplicates " << r.dropped_duplicates
            << ", dropped corrupt " << r.dropped_corrupt << ", bytes " << r.bytes_before
            << " -> " << r.bytes_after << "\n";
  return 0;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online joint data selection for parallel corpora"};
  app.require_subcommand(1);

  RunFlags select_flags;
  auto* select = app.add_subcommand("select", "run selection and emit sub-batches as JSONL");
  select_flags.attach(select);

  RunFlags score_flags;
  auto* score = app.add_subcommand("score", "emit diagonal similarity histograms only");
  score_flags.attach(score);

  auto* cache = app.add_subcommand("cache", "embedding cache maintenance");
  cache->require_subcommand(1);
  std::string verify_dir;
  std::vector<std::string> verify_files;
  auto* verify = cache->add_subcommand("verify", "check every shard record checksum");
  verify->add_option("--cache-dir", verify_dir, "cache directory");
  verify->add_option("files", verify_files, "individual shard files");
  std::string compact_dir;
  auto* compact = cache->add_subcommand("compact", "rewrite shards without duplicates");
  compact->add_option("--cache-dir", compact_dir, "cache directory")->required();

  std::string report_in;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "render a run report");
  report->add_option("report", report_in, "report JSON file")->required();
  report->add_flag("--json", report_json, "re-emit as JSON instead of text");

  auto* simlab = app.add_subcommand("simlab", "synthetic experiments");
  simlab->require_subcommand(1);
  std::string spec_path;
  std::string sim_strategy = "joint";
  std::uint64_t budget = 4000;
  std::uint64_t eval_every = 100;
  std::optional<std::uint64_t> sim_seed;
  std::string sim_out;
  auto* sim_run = simlab->add_subcommand("run", "run one learning curve");
  sim_run->add_option("--spec", spec_path, "experiment spec (INI)");
  sim_run->add_option("--strategy", sim_strategy, "joint|topk|iid");
  sim_run->add_option("--budget", budget, "selected samples to train on");
  sim_run->add_option("--eval-every", eval_every, "samples between curve points");
  sim_run->add_option("--seed", sim_seed, "selection seed");
  sim_run->add_option("--out", sim_out, "curve CSV path (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (select->parsed()) return cmd_select(select_flags);
    if (score->parsed()) return cmd_score(score_flags);
    if (verify->parsed()) {
      if (verify_dir.empty() && verify_files.empty()) {
        throw InvalidArgument("cache verify needs --cache-dir or shard files");
      }
      return cmd_cache_verify(verify_dir, verify_files);
    }
    if (compact->parsed()) return cmd_cache_compact(compact_dir);
    if (report->parsed()) {
      const RunReport r = run_report_from_json(read_file(report_in));
      std::cout << (report_json ? to_json(r) + "\n" : render_report(r));
      return 0;
    }
    if (sim_run->parsed()) {
      auto spec = spec_path.empty() ? simlab::default_experiment_spec()
                                    : simlab::load_experiment_spec(spec_path);
      if (sim_seed) spec.selection.seed = *sim_seed;
      const auto curve =
          simlab::run_experiment(spec, parse_strategy(sim_strategy), budget, eval_every);
      write_text(sim_out, simlab::to_csv(std::span(&curve, 1)));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "jointsel: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
