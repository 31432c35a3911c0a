// Drives the jointsel binary end to end.

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "jointsel/cache.hpp"
#include "jointsel/pipeline.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace jointsel;

namespace {

struct Result {
  int code;
  std::string out;
};

Result cli(const std::string& args, const testing::TempDir& dir) {
  const auto out_file = dir / "stdout.txt";
  const std::string cmd =
      std::string(JOINTSEL_CLI) + " " + args + " > " + out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, testing::read_file(out_file)};
}

// 30-pair corpus plus learner and reference shard directories.
struct Fixture {
  testing::TempDir dir;

  Fixture() {
    std::string tsv;
    std::vector<PairRecord> pairs;
    for (int i = 0; i < 30; ++i) {
      const std::string s = "src " + std::to_string(i);
      const std::string t = "trg " + std::to_string(i);
      tsv += s + "\t" + t + "\n";
      pairs.push_back(PairRecord::make(static_cast<PairId>(i), s, t));
    }
    testing::write_file(dir / "corpus.tsv", tsv);
    write_store("learn", "learner", 6, pairs, 100);
    write_store("ref", "reference", 10, pairs, 200);
  }

  void write_store(const std::string& sub, const std::string& model, std::size_t dim,
                   const std::vector<PairRecord>& pairs, std::uint64_t seed) {
    auto store = EmbeddingCache::open(dir / sub);
    for (const auto& p : pairs) {
      store.put({model, p.src_hash}, testing::random_unit_rows(1, dim, seed + 2 * p.id).data);
      store.put({model, p.trg_hash}, testing::random_unit_rows(1, dim, seed + 2 * p.id + 1).data);
    }
  }

  std::string inputs() const {
    return "--corpus " + (dir / "corpus.tsv").string() + " --learner-embeddings " +
           (dir / "learn").string() + " --reference-embeddings " + (dir / "ref").string();
  }
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("cli: select writes one record per super-batch and is repeatable") {
  Fixture f;
  const std::string common = "select " + f.inputs() +
                             " --super-batch 10 --filter-ratio 0.5 --chunks 1 --seed 3"
                             " --cache-dir " + (f.dir / "cache").string();
  auto r = cli(common + " --out " + (f.dir / "a.jsonl").string() + " --report " +
                   (f.dir / "rep.json").string(),
               f.dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto a = testing::read_file(f.dir / "a.jsonl");
  const auto recs = lines(a);
  REQUIRE(recs.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto rec = selection_record_from_jsonl(recs[k]);
    CHECK(rec.super_batch_ordinal == k);
    CHECK(rec.selected_ids.size() == 5);
    for (auto id : rec.selected_ids) CHECK(id / 10 == k);
  }
  CHECK(r.out.find("FLOPs relative to iid") != std::string::npos);

  // Warm cache, same bytes.
  r = cli(common + " --out " + (f.dir / "b.jsonl").string(), f.dir);
  REQUIRE(r.code == 0);
  CHECK(testing::read_file(f.dir / "b.jsonl") == a);

  const auto report = run_report_from_json(testing::read_file(f.dir / "rep.json"));
  CHECK(report.samples_trained == 15);
  CHECK(report.super_batches == 3);
  CHECK(report.cache_stats.misses == 60);

  r = cli("report " + (f.dir / "rep.json").string(), f.dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("samples trained        15") != std::string::npos);
}

TEST_CASE("cli: flags override the config file") {
  Fixture f;
  testing::write_file(f.dir / "run.ini",
                      "[selection]\nsuper_batch = 10\nfilter_ratio = 0.5\nchunks = 1\nseed = 1\n"
                      "strategy = iid\n[cache]\nenabled = false\n");
  const auto base = "select --config " + (f.dir / "run.ini").string() + " " + f.inputs();
  auto r = cli(base + " --out " + (f.dir / "cfg.jsonl").string(), f.dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(testing::read_file(f.dir / "cfg.jsonl").find("diag_scores") == std::string::npos);
  r = cli(base + " --strategy joint --chunks 5 --out " + (f.dir / "flag.jsonl").string(), f.dir);
  REQUIRE(r.code == 0);
  const auto rec = selection_record_from_jsonl(lines(testing::read_file(f.dir / "flag.jsonl"))[0]);
  CHECK(rec.chunk_of == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(rec.diag_scores.size() == 5);
  r = cli(base + " --set selection.w_hard=0 --emit-text --out " + (f.dir / "t.jsonl").string(),
          f.dir);
  REQUIRE(r.code == 0);
  CHECK(testing::read_file(f.dir / "t.jsonl").find("\"src\":[\"src ") != std::string::npos);
}

TEST_CASE("cli: score emits one histogram per model") {
  Fixture f;
  const auto r = cli("score " + f.inputs() + " --super-batch 10 --filter-ratio 0.5 --chunks 1 --out " +
                         (f.dir / "h.jsonl").string(),
                     f.dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto ls = lines(testing::read_file(f.dir / "h.jsonl"));
  REQUIRE(ls.size() == 2);
  std::string model;
  const auto h = histogram_from_jsonl(ls[0], &model);
  CHECK(model == "learner");
  CHECK(h.total() == 30);
}

TEST_CASE("cli: cache verify and compact") {
  Fixture f;
  auto r = cli("cache verify --cache-dir " + (f.dir / "ref").string(), f.dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("records 60, failures 0") != std::string::npos);
  r = cli("cache compact --cache-dir " + (f.dir / "ref").string(), f.dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("kept 60") != std::string::npos);

  // Cut the last record in half: verify must fail, committed data stays readable.
  std::filesystem::path shard;
  for (const auto& e : std::filesystem::directory_iterator(f.dir / "ref")) shard = e.path();
  std::filesystem::resize_file(shard, std::filesystem::file_size(shard) - 7);
  r = cli("cache verify " + shard.string(), f.dir);
  CHECK(r.code == 1);
  CHECK(r.out.find("trailing_bytes=") != std::string::npos);
}

TEST_CASE("cli: simlab run writes a curve") {
  testing::TempDir dir;
  testing::write_file(dir / "exp.ini",
                      "[corpus]\nn_clean = 40\nn_noisy = 10\ndim = 8\n"
                      "[selection]\nsuper_batch = 25\nfilter_ratio = 0.6\nchunks = 2\n");
  const auto r = cli("simlab run --spec " + (dir / "exp.ini").string() +
                         " --strategy topk --budget 50 --eval-every 10 --seed 4 --out " +
                         (dir / "curve.csv").string(),
                     dir);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto ls = lines(testing::read_file(dir / "curve.csv"));
  REQUIRE(ls.size() >= 3);
  CHECK(ls[0] == "samples,metric,strategy,seed");
  CHECK(ls[1].rfind("0,", 0) == 0);
  CHECK(ls.back().find(",topk,4") != std::string::npos);
}

TEST_CASE("cli: errors exit non-zero") {
  Fixture f;
  CHECK(cli("select " + f.inputs() + " --strategy greedy", f.dir).code == 2);
  CHECK(cli("select --corpus " + (f.dir / "corpus.tsv").string(), f.dir).code == 2);
  CHECK(cli("frobnicate", f.dir).code != 0);
  CHECK(cli("cache verify", f.dir).code == 2);
}
