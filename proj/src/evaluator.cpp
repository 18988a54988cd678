#include "gpatch/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <boost/math/distributions/students_t.hpp>

#include "parallel.hpp"

namespace gpatch {

HybridScorer::HybridScorer(const ModelParams& params, const LayerReps& reps, const FeatureTable& features,
                           unsigned threads)
    : params_(&params), reps_(&reps) {
  const auto& shape = params.shape;
  if (reps.depth() != shape.depth || reps.dim() != shape.dim) throw DataError("scorer: layer representations do not match model");
  for (Side side : {Side::User, Side::Item}) {
    const std::size_t n = reps.n_nodes(side);
    warm_.side(side) = NodeMatrix(n, shape.dim);
    patched_.side(side) = NodeMatrix(n, shape.out_dim);
    const std::size_t cdim = side == Side::User ? shape.user_content_dim : shape.item_content_dim;
    const auto& content = features.side(side);
    if (cdim > 0 && content.dim() != cdim) throw DataError(std::string("scorer: ") + side_name(side) + " feature dimension mismatch");
    detail::parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t k = begin; k < end; ++k) {
        NodeRef node{side, static_cast<std::uint32_t>(k)};
        Vector masked = Vector::Zero(static_cast<Eigen::Index>(shape.dim));
        if (reps.has(node)) {
          masked = warm_repr(node, reps, params);
          std::copy(masked.data(), masked.data() + masked.size(), warm_.side(side).row(k).begin());
          warm_.side(side).set_present(k, true);
        }
        if (cdim > 0 && !content.has(k)) continue;
        Vector out = patch_repr(side, masked, content_row(features, node, shape), params);
        std::copy(out.data(), out.data() + out.size(), patched_.side(side).row(k).begin());
        patched_.side(side).set_present(k, true);
      }
    });
  }
}

std::span<const double> HybridScorer::patched(NodeRef node) const {
  const auto& table = patched_.side(node.side);
  if (!table.has(node.index)) throw DataError("missing content for " + to_string(node));
  return table.row(node.index);
}

double HybridScorer::score(std::uint32_t user, std::uint32_t item) const {
  if (warm({Side::User, user}) && warm({Side::Item, item})) return warm_only(user, item);
  return cold_only(user, item);
}

double HybridScorer::warm_only(std::uint32_t user, std::uint32_t item) const {
  if (!warm_.users.has(user) || !warm_.items.has(item)) throw DataError("route to patching branch: pair has a cold side");
  return dot(warm_.users.row(user), warm_.items.row(item));
}

double HybridScorer::cold_only(std::uint32_t user, std::uint32_t item) const {
  return dot(patched({Side::User, user}), patched({Side::Item, item}));
}

const char* task_name(TaskMode mode) {
  switch (mode) {
    case TaskMode::Hybrid: return "hybrid";
    case TaskMode::Warm: return "warm";
    case TaskMode::Cold: return "cold";
  }
  return "?";
}

TaskMode parse_task(std::string_view name) {
  for (auto m : {TaskMode::Hybrid, TaskMode::Warm, TaskMode::Cold}) {
    if (name == task_name(m)) return m;
  }
  throw UsageError("unknown task mode '" + std::string(name) + "'");
}

RankingTask make_task(const SplitSpec& split, TaskMode mode, std::size_t cutoff, Partition truth_part) {
  if (cutoff < 1) throw UsageError("cutoff N must be >= 1");
  RankingTask task;
  task.mode = mode;
  task.cutoff = cutoff;
  auto item_ok = [&](std::uint32_t i) {
    switch (mode) {
      case TaskMode::Hybrid: return true;
      case TaskMode::Warm: return split.cold_item[i] == 0;
      case TaskMode::Cold: return split.cold_item[i] != 0;
    }
    return false;
  };
  for (std::uint32_t i = 0; i < split.n_items(); ++i) {
    if (item_ok(i)) task.candidates.push_back(i);
  }
  task.truth.assign(split.n_users(), {});
  task.exclusions.assign(split.n_users(), {});
  for (auto p : {Partition::Embed, Partition::Train, Partition::Val, Partition::Test}) {
    for (const Edge& e : split.part(p)) {
      if (p != truth_part) {
        task.exclusions[e.user].push_back(e.item);
      } else if (item_ok(e.item) && !(mode == TaskMode::Warm && split.cold_user[e.user])) {
        task.truth[e.user].push_back(e.item);
      }
    }
  }
  for (std::uint32_t u = 0; u < split.n_users(); ++u) {
    std::sort(task.truth[u].begin(), task.truth[u].end());
    std::sort(task.exclusions[u].begin(), task.exclusions[u].end());
    if (!task.truth[u].empty()) task.users.push_back(u);
  }
  return task;
}

std::vector<ScoredItem> top_n(std::span<const std::uint32_t> candidates, std::span<const double> scores, std::size_t n,
                              std::span<const std::uint32_t> excluded) {
  if (candidates.size() != scores.size()) throw DataError("top_n: score count mismatch");
  std::vector<ScoredItem> pool;
  pool.reserve(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (std::binary_search(excluded.begin(), excluded.end(), candidates[k])) continue;
    pool.push_back({candidates[k], scores[k]});
  }
  auto better = [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  };
  const std::size_t keep = std::min(n, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(), better);
  pool.resize(keep);
  return pool;
}

std::vector<ScoredItem> rank_candidates(std::uint32_t user, const RankingTask& task, const HybridScorer& scorer) {
  std::vector<double> scores(task.candidates.size());
  for (std::size_t k = 0; k < task.candidates.size(); ++k) scores[k] = scorer.score(user, task.candidates[k]);
  std::span<const std::uint32_t> excluded;
  if (user < task.exclusions.size()) excluded = task.exclusions[user];
  return top_n(task.candidates, scores, task.cutoff, excluded);
}

Metrics metrics_at_n(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> truth, std::size_t n) {
  if (n < 1) throw UsageError("metrics: N must be >= 1");
  if (truth.empty()) throw DataError("metrics: empty ground truth");
  const std::size_t len = std::min(n, ranked.size());
  std::size_t hits = 0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < len; ++r) {
    if (std::binary_search(truth.begin(), truth.end(), ranked[r])) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(n, truth.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  Metrics m;
  m.recall = static_cast<double>(hits) / static_cast<double>(truth.size());
  m.precision = static_cast<double>(hits) / static_cast<double>(n);
  m.ndcg = dcg / idcg;
  return m;
}

double auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw DataError("AUC needs at least one positive and one negative");
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;  // counts in halves, exact in double
  for (double p : positives) {
    auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    auto hi = std::upper_bound(lo, neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

TTest paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("paired t-test: samples differ in length");
  if (a.size() < 2) throw DataError("paired t-test: need at least 2 pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) mean += a[k] - b[k];
  mean /= n;
  double ss = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double dev = (a[k] - b[k]) - mean;
    ss += dev * dev;
  }
  TTest out;
  out.df = a.size() - 1;
  const double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) {
    out.degenerate = true;
    out.t = mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
    out.p = mean == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(static_cast<double>(out.df));
  out.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))));
  return out;
}

std::vector<double> MetricReport::column(double Metrics::*field) const {
  std::vector<double> out;
  out.reserve(per_user.size());
  for (const auto& m : per_user) out.push_back(m.*field);
  return out;
}

void finalize_report(MetricReport& report) {
  report.mean = {};
  report.stderr_ = {};
  const std::size_t n = report.per_user.size();
  if (n == 0) {
    report.warnings.push_back(std::string(task_name(report.mode)) + ": no users with ground truth");
    return;
  }
  for (auto field : {&Metrics::recall, &Metrics::precision, &Metrics::ndcg}) {
    double sum = 0.0;
    for (const auto& m : report.per_user) sum += m.*field;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& m : report.per_user) ss += (m.*field - mean) * (m.*field - mean);
    report.mean.*field = mean;
    report.stderr_.*field = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n)) : 0.0;
  }
}

MetricReport evaluate(const RankingTask& task, const HybridScorer& scorer, unsigned threads) {
  MetricReport report;
  report.mode = task.mode;
  report.cutoff = task.cutoff;
  report.users = task.users;
  report.per_user.resize(task.users.size());
  detail::parallel_for(task.users.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores(task.candidates.size());
    std::vector<std::uint32_t> items;
    for (std::size_t k = begin; k < end; ++k) {
      const auto u = task.users[k];
      for (std::size_t c = 0; c < task.candidates.size(); ++c) {
        scores[c] = task.mode == TaskMode::Warm   ? scorer.warm_only(u, task.candidates[c])
                    : task.mode == TaskMode::Cold ? scorer.cold_only(u, task.candidates[c])
                                                  : scorer.score(u, task.candidates[c]);
      }
      auto ranked = top_n(task.candidates, scores, task.cutoff, task.exclusions[u]);
      items.clear();
      for (const auto& s : ranked) items.push_back(s.item);
      report.per_user[k] = metrics_at_n(items, task.truth[u], task.cutoff);
    }
  });
  finalize_report(report);
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void write_report_records(std::ostream& out, const MetricReport& report) {
  const char* names[] = {"recall", "precision", "ndcg"};
  double Metrics::*fields[] = {&Metrics::recall, &Metrics::precision, &Metrics::ndcg};
  for (int k = 0; k < 3; ++k) {
    out << names[k] << ", " << task_name(report.mode) << ", " << report.cutoff << ", "
        << fmt_full(report.mean.*fields[k]) << ", " << fmt_full(report.stderr_.*fields[k]) << '\n';
  }
}

void write_report_table(std::ostream& out, std::span<const MetricReport> reports) {
  out << "mode     users    REC@N      PRE@N      NDCG@N     (N)\n";
  for (const auto& r : reports) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-8s %-8zu %-10s %-10s %-10s %zu\n", task_name(r.mode), r.users.size(),
                  fmt(r.mean.recall).c_str(), fmt(r.mean.precision).c_str(), fmt(r.mean.ndcg).c_str(), r.cutoff);
    out << line;
  }
}

void write_report_csv(std::ostream& out, const MetricReport& report, const IdInterner& interner) {
  out << "user,recall,precision,ndcg\n";
  for (std::size_t k = 0; k < report.users.size(); ++k) {
    const auto& m = report.per_user[k];
    out << interner.id_of(Side::User, report.users[k]) << ',' << fmt_full(m.recall) << ',' << fmt_full(m.precision)
        << ',' << fmt_full(m.ndcg) << '\n';
  }
}

double recompute_score(const RecomputeContext& ctx, std::uint32_t user, std::uint32_t item) {
  const auto& params = *ctx.params;
  auto warm_vector = [&](NodeRef node) -> std::optional<Vector> {
    if (ctx.graph->degree(node) == 0) return std::nullopt;
    auto block = pool_layers(sample_walks(*ctx.graph, node, ctx.walk), *ctx.embeddings);
    Eigen::Map<const Matrix> rows(block.data(), static_cast<Eigen::Index>(ctx.walk.depth + 1),
                                  static_cast<Eigen::Index>(params.shape.dim));
    return Vector(rows.transpose() * params.layer_weights(node.side));
  };
  NodeRef u{Side::User, user}, i{Side::Item, item};
  auto xu = warm_vector(u);
  auto xi = warm_vector(i);
  if (xu && xi) return xu->dot(*xi);
  auto patched = [&](NodeRef node, const std::optional<Vector>& x) {
    Vector masked = x ? *x : Vector::Zero(static_cast<Eigen::Index>(params.shape.dim));
    return patch_repr(node.side, masked, content_row(*ctx.features, node, params.shape), params);
  };
  return patched(u, xu).dot(patched(i, xi));
}

BenchReport bench_inference(const HybridScorer& scorer, const RecomputeContext& ctx,
                            std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs, std::size_t repeats) {
  using clock = std::chrono::steady_clock;
  BenchReport report;
  report.scorings = pairs.size();
  repeats = std::max<std::size_t>(1, repeats);
  std::vector<double> fast(pairs.size()), slow(pairs.size());
  for (std::size_t r = 0; r < repeats; ++r) {
    auto t0 = clock::now();
    for (std::size_t k = 0; k < pairs.size(); ++k) fast[k] = scorer.score(pairs[k].first, pairs[k].second);
    auto t1 = clock::now();
    for (std::size_t k = 0; k < pairs.size(); ++k) slow[k] = recompute_score(ctx, pairs[k].first, pairs[k].second);
    auto t2 = clock::now();
    report.precomputed_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    report.recompute_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
  }
  for (std::size_t k = 0; k < pairs.size(); ++k) report.max_abs_diff = std::max(report.max_abs_diff, std::abs(fast[k] - slow[k]));
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  const double fast_ms = median(report.precomputed_ms);
  report.ratio = fast_ms > 0.0 ? median(report.recompute_ms) / fast_ms : INFINITY;
  return report;
}

}  // namespace gpatch
