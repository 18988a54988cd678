#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "../common/oracles.hpp"
#include "helpers.hpp"

using namespace gpatch;

namespace {

std::vector<std::uint32_t> items_of(const std::vector<ScoredItem>& ranked) {
  std::vector<std::uint32_t> out;
  for (const auto& s : ranked) out.push_back(s.item);
  return out;
}

}  // namespace

TEST_SUITE("evaluator") {

TEST_CASE("metrics: perfect list, no hits, hand values") {
  std::vector<std::uint32_t> truth = {1, 2, 3};
  auto m = metrics_at_n(std::vector<std::uint32_t>{1, 2, 3}, truth, 3);
  CHECK(m.recall == 1.0);
  CHECK(m.precision == 1.0);
  CHECK(m.ndcg == 1.0);
  m = metrics_at_n(std::vector<std::uint32_t>{7, 8, 9}, truth, 3);
  CHECK(m.recall == 0.0);
  CHECK(m.precision == 0.0);
  CHECK(m.ndcg == 0.0);
  // One hit at rank 2 of N=2 with a single relevant item.
  m = metrics_at_n(std::vector<std::uint32_t>{5, 4}, std::vector<std::uint32_t>{4}, 2);
  CHECK(m.recall == 1.0);
  CHECK(m.precision == 0.5);
  CHECK(m.ndcg == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
  CHECK_THROWS_AS(metrics_at_n(std::vector<std::uint32_t>{1}, std::vector<std::uint32_t>{}, 1), DataError);
  CHECK_THROWS_AS(metrics_at_n(std::vector<std::uint32_t>{1}, truth, 0), UsageError);
}

TEST_CASE("metrics: exact agreement with literal definitions, recall monotone in N") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const std::uint32_t universe = 5 + rng() % 40;
    std::vector<std::uint32_t> perm(universe);
    for (std::uint32_t k = 0; k < universe; ++k) perm[k] = k;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::uint32_t> ranked(perm.begin(), perm.begin() + 1 + rng() % universe);
    std::set<std::uint32_t> truth_set;
    const std::size_t t = 1 + rng() % std::min<std::uint32_t>(8, universe);
    while (truth_set.size() < t) truth_set.insert(static_cast<std::uint32_t>(rng() % universe));
    std::vector<std::uint32_t> truth(truth_set.begin(), truth_set.end());
    double prev_recall = -1.0;
    for (std::size_t n = 1; n <= 25; ++n) {
      auto got = metrics_at_n(ranked, truth, n);
      auto want = oracle::metrics(ranked, truth, n);
      CHECK(got.recall == want.recall);
      CHECK(got.precision == want.precision);
      CHECK(got.ndcg == want.ndcg);
      CHECK(got.ndcg >= 0.0);
      CHECK(got.ndcg <= 1.0 + 1e-15);
      CHECK(got.recall >= prev_recall);
      prev_recall = got.recall;
      std::size_t hits = 0;
      for (std::size_t r = 0; r < std::min(n, ranked.size()); ++r) hits += truth_set.count(ranked[r]);
      CHECK(got.precision * static_cast<double>(n) == doctest::Approx(static_cast<double>(hits)).epsilon(1e-12));
    }
  }
}

TEST_CASE("paired t-test") {
  SUBCASE("identical samples") {
    std::vector<double> a = {0.1, 0.4, 0.2, 0.9};
    auto t = paired_ttest(a, a);
    CHECK(t.p == 1.0);
    CHECK(t.degenerate);
  }
  SUBCASE("constant nonzero shift") {
    std::vector<double> a = {1.0, 2.0, 3.0}, b = {0.5, 1.5, 2.5};
    auto t = paired_ttest(a, b);
    CHECK(t.p == 0.0);
    CHECK(t.t > 0.0);
  }
  SUBCASE("critical value with 10 degrees of freedom") {
    // Differences with mean m and sd s give t = m / (s / sqrt(11)); pick them to hit 2.228.
    std::vector<double> d = {1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 0};
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= 11.0;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / 10.0);
    const double shift = 2.228 * sd / std::sqrt(11.0) - mean;
    std::vector<double> a(11), b(11, 0.0);
    for (std::size_t k = 0; k < 11; ++k) a[k] = d[k] + shift;
    auto t = paired_ttest(a, b);
    CHECK(t.df == 10);
    CHECK(t.t == doctest::Approx(2.228).epsilon(1e-9));
    CHECK(std::abs(t.p - 0.05) < 1e-3);
  }
  SUBCASE("hand example and sign symmetry") {
    std::vector<double> a = {3.0, 5.0, 4.0}, b = {1.0, 2.0, 2.0};
    // d = {2, 3, 2}: mean 7/3, sd sqrt(1/3), t = (7/3) / (sqrt(1/3)/sqrt(3)) = 7.
    auto t = paired_ttest(a, b);
    CHECK(t.t == doctest::Approx(7.0).epsilon(1e-12));
    CHECK(t.p == doctest::Approx(0.019804).epsilon(1e-4));
    auto r = paired_ttest(b, a);
    CHECK(r.t == doctest::Approx(-7.0).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(t.p).epsilon(1e-12));
  }
  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1.0}, std::vector<double>{2.0}), DataError);
  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1.0, 2.0}, std::vector<double>{2.0}), DataError);
}

TEST_CASE("top_n: ties by index, exclusions, short lists, full-sort oracle") {
  std::vector<std::uint32_t> cand = {4, 2, 9, 7};
  std::vector<double> scores = {1.0, 1.0, 3.0, 1.0};
  auto r = top_n(cand, scores, 3);
  CHECK(items_of(r) == std::vector<std::uint32_t>{9, 2, 4});
  std::vector<std::uint32_t> excl = {2, 9};
  CHECK(items_of(top_n(cand, scores, 5, excl)) == std::vector<std::uint32_t>{4, 7});
  CHECK(top_n(cand, scores, 0).empty());

  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + rng() % 60;
    std::vector<std::uint32_t> c(m);
    for (std::size_t k = 0; k < m; ++k) c[k] = static_cast<std::uint32_t>(k * 3 + rng() % 3);
    std::shuffle(c.begin(), c.end(), rng);
    std::vector<double> s(m);
    for (double& v : s) v = static_cast<double>(rng() % 5);
    std::set<std::uint32_t> ex_set;
    for (std::size_t k = 0; k < m / 4; ++k) ex_set.insert(c[rng() % m]);
    std::vector<std::uint32_t> ex(ex_set.begin(), ex_set.end());
    const std::size_t n = 1 + rng() % 20;
    CHECK(items_of(top_n(c, s, n, ex)) == oracle::full_sort(c, s, n, ex));
  }
}

TEST_CASE("make_task: candidates, truth and exclusions per mode") {
  testing::SmallWorld world(7);
  const auto& split = world.split;
  for (auto mode : {TaskMode::Hybrid, TaskMode::Warm, TaskMode::Cold}) {
    auto task = make_task(split, mode, 20);
    for (auto i : task.candidates) {
      if (mode == TaskMode::Warm) CHECK_FALSE(split.cold_item[i]);
      if (mode == TaskMode::Cold) CHECK(split.cold_item[i]);
    }
    if (mode == TaskMode::Hybrid) CHECK(task.candidates.size() == split.n_items());
    for (auto u : task.users) {
      CHECK_FALSE(task.truth[u].empty());
      if (mode == TaskMode::Warm) CHECK_FALSE(split.cold_user[u]);
      for (auto i : task.truth[u]) CHECK(std::binary_search(task.candidates.begin(), task.candidates.end(), i));
    }
    std::size_t excluded = 0;
    for (const auto& e : task.exclusions) excluded += e.size();
    CHECK(excluded == split.part(Partition::Embed).size() + split.part(Partition::Train).size() +
                          split.part(Partition::Val).size());
  }
  auto cold = make_task(split, TaskMode::Cold, 20);
  CHECK(cold.candidates == split.cold_items());
  CHECK_THROWS_AS(make_task(split, TaskMode::Hybrid, 0), UsageError);
  CHECK(parse_task("cold") == TaskMode::Cold);
  CHECK_THROWS_AS(parse_task("tepid"), UsageError);
}

TEST_CASE("scorer routing matches the model functions") {
  testing::SmallWorld world(8);
  auto p = ModelParams::init(world.shape(), 8);
  HybridScorer scorer(p, world.reps, world.features);
  std::size_t warm_pairs = 0, cold_pairs = 0;
  for (std::uint32_t u = 0; u < world.split.n_users(); u += 7) {
    for (std::uint32_t i = 0; i < world.split.n_items(); i += 5) {
      const bool both_warm = world.reps.has({Side::User, u}) && world.reps.has({Side::Item, i});
      const double cold = cold_score(u, i, &world.reps, world.features, p, PatchMode::Infer);
      CHECK(scorer.cold_only(u, i) == doctest::Approx(cold).epsilon(1e-12));
      if (both_warm) {
        ++warm_pairs;
        CHECK(scorer.score(u, i) == doctest::Approx(warm_score(u, i, world.reps, p)).epsilon(1e-12));
      } else {
        ++cold_pairs;
        CHECK(scorer.score(u, i) == scorer.cold_only(u, i));
        CHECK_THROWS_AS(scorer.warm_only(u, i), DataError);
      }
    }
  }
  CHECK(warm_pairs > 0);
  CHECK(cold_pairs > 0);
}

TEST_CASE("evaluate agrees with the generic path and the full-sort oracle") {
  testing::SmallWorld world(9);
  auto p = ModelParams::init(world.shape(), 9);
  HybridScorer scorer(p, world.reps, world.features);
  for (auto mode : {TaskMode::Hybrid, TaskMode::Warm, TaskMode::Cold}) {
    auto task = make_task(world.split, mode, 10);
    auto fn = [&](std::uint32_t u, std::uint32_t i) {
      return mode == TaskMode::Warm ? scorer.warm_only(u, i) : mode == TaskMode::Cold ? scorer.cold_only(u, i)
                                                                                     : scorer.score(u, i);
    };
    auto report = evaluate(task, scorer, 2);
    auto generic = evaluate_with(task, fn);
    REQUIRE(report.per_user.size() == generic.per_user.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < report.per_user.size(); ++k) {
      const auto u = report.users[k];
      std::vector<double> s;
      for (auto i : task.candidates) s.push_back(fn(u, i));
      auto want = oracle::metrics(oracle::full_sort(task.candidates, s, 10, task.exclusions[u]), task.truth[u], 10);
      CHECK(report.per_user[k].ndcg == want.ndcg);
      CHECK(report.per_user[k].recall == generic.per_user[k].recall);
      sum += report.per_user[k].recall;
    }
    CHECK(report.mean.recall == doctest::Approx(sum / static_cast<double>(report.per_user.size())).epsilon(1e-12));
  }
}

TEST_CASE("cold item scores do not depend on the item's withheld interactions") {
  testing::SmallWorld world(10);
  auto p = ModelParams::init(world.shape(), 10);
  auto cold = world.split.cold_items();
  REQUIRE_FALSE(cold.empty());
  HybridScorer before(p, world.reps, world.features);
  std::vector<double> base;
  for (std::uint32_t u = 0; u < world.split.n_users(); ++u) base.push_back(before.score(u, cold[0]));

  // Rebuild everything with the cold item's test and validation edges removed.
  SplitSpec stripped = world.split;
  for (auto part : {Partition::Val, Partition::Test}) {
    auto& edges = stripped.part(part);
    edges.erase(std::remove_if(edges.begin(), edges.end(), [&](const Edge& e) { return e.item == cold[0]; }),
                edges.end());
  }
  auto graph = stripped.graph({Partition::Embed});
  auto reps = precompute_all(graph, world.embeddings, world.walk);
  HybridScorer after(p, reps, world.features);
  for (std::uint32_t u = 0; u < world.split.n_users(); ++u) CHECK(after.score(u, cold[0]) == base[u]);
}

TEST_CASE("precomputed and recomputed scores agree") {
  testing::SmallWorld world(11);
  auto p = ModelParams::init(world.shape(), 11);
  HybridScorer scorer(p, world.reps, world.features);
  RecomputeContext ctx{&world.graph, &world.embeddings, &world.features, &p, world.walk};
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::mt19937_64 rng(11);
  for (int k = 0; k < 300; ++k) {
    pairs.push_back({static_cast<std::uint32_t>(rng() % world.split.n_users()),
                     static_cast<std::uint32_t>(rng() % world.split.n_items())});
  }
  for (const auto& [u, i] : pairs) CHECK(std::abs(scorer.score(u, i) - recompute_score(ctx, u, i)) <= 1e-10);
  auto bench = bench_inference(scorer, ctx, pairs, 1);
  CHECK(bench.scorings == 300);
  CHECK(bench.precomputed_ms.size() == 1);
  CHECK(bench.max_abs_diff <= 1e-10);
  CHECK(bench.ratio > 1.0);
}

TEST_CASE("report writers") {
  MetricReport r;
  r.mode = TaskMode::Cold;
  r.cutoff = 20;
  r.users = {0, 1};
  r.per_user = {{0.5, 0.1, 0.25}, {1.0, 0.2, 0.75}};
  finalize_report(r);
  CHECK(r.mean.recall == 0.75);
  CHECK(r.stderr_.recall == doctest::Approx(0.25).epsilon(1e-12));
  std::ostringstream rec;
  write_report_records(rec, r);
  CHECK(rec.str() == "recall, cold, 20, 0.75, 0.25\nprecision, cold, 20, 0.15, 0.05\nndcg, cold, 20, 0.5, 0.25\n");
  IdInterner in;
  in.intern(Side::User, "alice");
  in.intern(Side::User, "bob");
  std::ostringstream csv;
  write_report_csv(csv, r, in);
  CHECK(csv.str() == "user,recall,precision,ndcg\nalice,0.5,0.1,0.25\nbob,1,0.2,0.75\n");
  std::ostringstream table;
  std::vector<MetricReport> reports = {r};
  write_report_table(table, reports);
  CHECK(table.str().find("cold") != std::string::npos);

  MetricReport empty;
  finalize_report(empty);
  CHECK(empty.warnings.size() == 1);
}

}
