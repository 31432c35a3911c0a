#include <cmath>

#include "doctest.h"
#include "jointsel/rng.hpp"
#include "jointsel/scoring.hpp"
#include "support.hpp"

using namespace jointsel;

namespace {

EmbeddingMatrix emb(std::size_t n, std::size_t d, std::vector<float> v,
                    const std::string& model = "m", Side side = Side::kSource) {
  return EmbeddingMatrix(model, side, Matrix(n, d, std::move(v)), testing::iota_ids(n));
}

SimilarityMatrix sim(std::size_t n, std::vector<float> v) {
  return SimilarityMatrix{n, Matrix(n, n, std::move(v)), "m"};
}

void check_matrix(const Matrix& m, const std::vector<double>& expect, double tol = 1e-6) {
  REQUIRE(m.data.size() == expect.size());
  for (std::size_t k = 0; k < expect.size(); ++k) {
    CHECK(std::abs(static_cast<double>(m.data[k]) - expect[k]) <= tol);
  }
}

}  // namespace

TEST_CASE("similarity: identity and antipodal") {
  const auto s = similarity_matrix(emb(2, 2, {1, 0, 0, 1}), emb(2, 2, {1, 0, 0, 1}));
  check_matrix(s.values, {1, 0, 0, 1}, 0.0);
  const auto a = similarity_matrix(emb(1, 2, {1, 0}), emb(1, 2, {-1, 0}));
  check_matrix(a.values, {-1}, 0.0);
}

TEST_CASE("similarity: 2x2 against an explicit multiplication") {
  const auto s = similarity_matrix(emb(2, 2, {0.6f, 0.8f, 1, 0}), emb(2, 2, {0, 1, 0.6f, 0.8f}));
  // [0.6*0 + 0.8*1, 0.6*0.6 + 0.8*0.8; 1*0 + 0*1, 1*0.6 + 0*0.8]
  check_matrix(s.values, {0.8, 1.0, 0.0, 0.6});
}

TEST_CASE("similarity: rejects mismatched inputs") {
  const auto a = testing::random_embeddings(4, 8, 1, "a");
  CHECK_THROWS_AS(similarity_matrix(a, testing::random_embeddings(4, 8, 2, "b")), ModelMismatch);
  CHECK_THROWS_AS(similarity_matrix(a, testing::random_embeddings(4, 6, 2, "a")),
                  DimensionMismatch);
  CHECK_THROWS_AS(similarity_matrix(a, testing::random_embeddings(5, 8, 2, "a")),
                  DimensionMismatch);
  const EmbeddingMatrix shifted("a", Side::kTarget, testing::random_unit_rows(4, 8, 3),
                                {1, 2, 3, 4});
  CHECK_THROWS_AS(similarity_matrix(a, shifted), DimensionMismatch);
}

TEST_CASE("similarity: self-similarity has unit diagonal") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto e = testing::random_embeddings(70, 1 + seed * 13, seed);
    const auto s = similarity_matrix(e, e);
    for (std::size_t i = 0; i < s.n; ++i) CHECK(std::abs(s.values(i, i) - 1.0) <= 1e-5);
  }
}

TEST_CASE("similarity: thread count does not change the result") {
  const auto a = testing::random_embeddings(300, 48, 5);
  const auto b = testing::random_embeddings(300, 48, 6);
  const auto one = similarity_matrix(a, b, 1);
  for (unsigned t : {2u, 3u, 8u}) CHECK(similarity_matrix(a, b, t).values == one.values);
}

TEST_CASE("hard and easy scores") {
  check_matrix(hard_learner_scores(sim(2, {1, 0, 0, 1})), {-1, 0, 0, -1}, 0.0);
  check_matrix(hard_learner_scores(sim(1, {-0.5f})), {0.5}, 0.0);
  check_matrix(easy_reference_scores(sim(1, {0.9f})), {static_cast<double>(0.9f)}, 0.0);
  Rng rng(9);
  std::vector<float> v(16);
  for (auto& x : v) x = static_cast<float>(2 * rng.uniform_open() - 1);
  const auto s = sim(4, v);
  const Matrix h = hard_learner_scores(s);
  const Matrix e = easy_reference_scores(s);
  for (std::size_t k = 0; k < 16; ++k) {
    CHECK(h.data[k] == -v[k]);
    CHECK(e.data[k] == v[k]);
    CHECK(h.data[k] + e.data[k] == 0.0f);
  }
}

TEST_CASE("learnability: hand-computed 2x2") {
  const auto m = learnability_matrix(sim(2, {0.5f, 0.0f, 0.1f, 0.7f}),
                                     sim(2, {0.9f, 0.1f, 0.2f, 0.8f}), {0.8, 0.2});
  check_matrix(m.values, {0.62, 0.08, 0.14, 0.50});
  CHECK(m.diagonal() == std::vector<float>{m(0, 0), m(1, 1)});
}

TEST_CASE("learnability: weight degeneracies") {
  const auto s = sim(2, {0.3f, -0.2f, 0.7f, 1.0f});
  check_matrix(learnability_matrix(s, s, {1, 1}).values, {0, 0, 0, 0}, 0.0);
  const auto r = sim(2, {0.9f, 0.1f, -0.4f, 0.2f});
  const auto m = learnability_matrix(s, r, {1, 0});
  for (std::size_t k = 0; k < 4; ++k) CHECK(m.values.data[k] == r.values.data[k]);
}

TEST_CASE("learnability: size mismatch") {
  CHECK_THROWS_AS(learnability_matrix(sim(1, {0}), sim(2, {0, 0, 0, 0}), {0.8, 0.2}),
                  DimensionMismatch);
}

TEST_CASE("learnability: linear in the weights, bounded, argmax stable") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.uniform_below(30);
    const auto ls = testing::random_embeddings(n, 16, rng.next_u64(), "l");
    const auto lt = testing::random_embeddings(n, 16, rng.next_u64(), "l", Side::kTarget);
    const auto rs = testing::random_embeddings(n, 24, rng.next_u64(), "r");
    const auto rt = testing::random_embeddings(n, 24, rng.next_u64(), "r", Side::kTarget);
    const auto sl = similarity_matrix(ls, lt);
    const auto sr = similarity_matrix(rs, rt);
    const ScoreWeights w{rng.uniform_open(), rng.uniform_open()};
    const double a = 0.1 + 5 * rng.uniform_open();
    const auto base = learnability_matrix(sl, sr, w);
    const auto scaled = learnability_matrix(sl, sr, {a * w.w_easy, a * w.w_hard});
    std::size_t arg_base = 0;
    std::size_t arg_scaled = 0;
    for (std::size_t k = 0; k < n * n; ++k) {
      CHECK(std::abs(scaled.values.data[k] - a * base.values.data[k]) <= 1e-5 * a);
      CHECK(std::abs(base.values.data[k]) <= w.total() + 1e-5);
      if (base.values.data[k] > base.values.data[arg_base]) arg_base = k;
      if (scaled.values.data[k] > scaled.values.data[arg_scaled]) arg_scaled = k;
    }
    CHECK(arg_base == arg_scaled);
  }
}

TEST_CASE("histogram: impulse and symmetric cases") {
  const auto h = score_histogram(std::vector<float>{1, 1, 1}, 4);
  CHECK(h.counts == std::vector<std::uint64_t>{0, 0, 0, 3});
  CHECK(h.mean == 1.0);
  CHECK(h.variance == 0.0);
  CHECK(h.bin_edges == std::vector<double>{-1, -0.5, 0, 0.5, 1});
  const auto s = score_histogram(std::vector<float>{-1, 1}, 2);
  CHECK(s.counts == std::vector<std::uint64_t>{1, 1});
  CHECK(s.mean == 0.0);
  CHECK(s.variance == doctest::Approx(1.0));
}

TEST_CASE("histogram: out-of-range values") {
  CHECK_NOTHROW(score_histogram(std::vector<float>{1.000001f, -1.000001f}, 4));
  CHECK_THROWS_AS(score_histogram(std::vector<float>{1.01f}, 4), ValueOutOfRange);
  CHECK_THROWS(score_histogram(std::vector<float>{0.0f}, 0));
}

TEST_CASE("histogram: uniform samples fill bins evenly") {
  Rng rng(2024);
  std::vector<float> v(10000);
  for (auto& x : v) x = static_cast<float>(2 * rng.uniform_open() - 1);
  for (std::size_t bins : {4u, 10u, 40u}) {
    const auto h = score_histogram(v, bins);
    const double p = 1.0 / static_cast<double>(bins);
    const double sd = std::sqrt(10000 * p * (1 - p));
    for (auto c : h.counts) CHECK(std::abs(static_cast<double>(c) - 10000 * p) < 5 * sd);
    CHECK(h.total() == 10000);
  }
}

TEST_CASE("histogram: accumulator matches one-shot and round-trips") {
  Rng rng(5);
  std::vector<float> v(1001);
  for (auto& x : v) x = static_cast<float>(std::tanh(rng.normal()));
  HistogramAccumulator acc(16);
  acc.add(std::span(v).subspan(0, 400));
  acc.add(std::span(v).subspan(400));
  const auto a = acc.finish();
  const auto b = score_histogram(v, 16);
  CHECK(a.counts == b.counts);
  CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
  CHECK(a.variance == doctest::Approx(b.variance).epsilon(1e-12));

  std::string model;
  const auto back = histogram_from_jsonl(histogram_to_jsonl(a, "ref-x"), &model);
  CHECK(model == "ref-x");
  CHECK(back.counts == a.counts);
  CHECK(back.bin_edges == a.bin_edges);
  CHECK(back.mean == a.mean);
  CHECK(back.variance == a.variance);
}
