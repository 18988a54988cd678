#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpatch/dataio.hpp"
#include "gpatch/model.hpp"
#include "gpatch/walker.hpp"

namespace gpatch {

/// Hybrid router: warm-warm pairs go to GWarmer, every other pair to the
/// patching networks with cold sides masked. Warm and patched vectors for all
/// nodes are computed once at construction, so scoring is one inner product.
class HybridScorer {
 public:
  HybridScorer(const ModelParams& params, const LayerReps& reps, const FeatureTable& features, unsigned threads = 1);

  bool warm(NodeRef node) const { return reps_->has(node); }
  double score(std::uint32_t user, std::uint32_t item) const;
  double warm_only(std::uint32_t user, std::uint32_t item) const;
  double cold_only(std::uint32_t user, std::uint32_t item) const;

  std::size_t n_users() const { return reps_->n_nodes(Side::User); }
  std::size_t n_items() const { return reps_->n_nodes(Side::Item); }
  const ModelParams& params() const { return *params_; }

 private:
  std::span<const double> patched(NodeRef node) const;

  const ModelParams* params_;
  const LayerReps* reps_;
  SidedTables warm_;     // x_t rows for warm nodes
  SidedTables patched_;  // x_tc rows in inference masking; absent when content is missing
};

enum class TaskMode { Hybrid, Warm, Cold };

const char* task_name(TaskMode mode);
TaskMode parse_task(std::string_view name);

struct RankingTask {
  TaskMode mode = TaskMode::Hybrid;
  std::size_t cutoff = 20;
  std::vector<std::uint32_t> candidates;               // sorted item indices
  std::vector<std::vector<std::uint32_t>> truth;       // per user, sorted
  std::vector<std::vector<std::uint32_t>> exclusions;  // per user, sorted
  std::vector<std::uint32_t> users;                    // users with non-empty truth
};

/// Hybrid: all items; warm: warm items and warm users; cold: cold items.
/// Truth comes from `truth_part`; every other partition is excluded.
RankingTask make_task(const SplitSpec& split, TaskMode mode, std::size_t cutoff, Partition truth_part = Partition::Test);

struct ScoredItem {
  std::uint32_t item = 0;
  double score = 0.0;
};

/// Top-N by descending score, ties by ascending item index.
std::vector<ScoredItem> top_n(std::span<const std::uint32_t> candidates, std::span<const double> scores, std::size_t n,
                              std::span<const std::uint32_t> excluded = {});

std::vector<ScoredItem> rank_candidates(std::uint32_t user, const RankingTask& task, const HybridScorer& scorer);

struct Metrics {
  double recall = 0.0;
  double precision = 0.0;
  double ndcg = 0.0;
};

/// Binary-gain metrics; `ranked` is truncated to n. `truth` must be sorted and non-empty.
Metrics metrics_at_n(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> truth, std::size_t n);

/// P(positive score > negative score), ties 0.5. Throws on an empty side.
double auc(std::span<const double> positives, std::span<const double> negatives);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
  bool degenerate = false;
};

/// Two-sided paired t-test. Zero variance of differences gives p = 1 when
/// the mean difference is 0 and p = 0 otherwise.
TTest paired_ttest(std::span<const double> a, std::span<const double> b);

struct MetricReport {
  TaskMode mode = TaskMode::Hybrid;
  std::size_t cutoff = 20;
  std::vector<std::uint32_t> users;
  std::vector<Metrics> per_user;
  Metrics mean;
  Metrics stderr_;
  std::vector<std::string> warnings;

  std::vector<double> column(double Metrics::*field) const;
};

MetricReport evaluate(const RankingTask& task, const HybridScorer& scorer, unsigned threads = 1);

/// Fills mean and standard error from per_user.
void finalize_report(MetricReport& report);

/// Same metrics for an arbitrary score function, e.g. baselines.
template <class ScoreFn>
MetricReport evaluate_with(const RankingTask& task, ScoreFn&& score);

/// `metric, mode, N, mean, stderr` lines.
void write_report_records(std::ostream& out, const MetricReport& report);
void write_report_table(std::ostream& out, std::span<const MetricReport> reports);
void write_report_csv(std::ostream& out, const MetricReport& report, const IdInterner& interner);

/// Scores a pair without stored representations: walks, pooling and patching
/// are redone per call.
struct RecomputeContext {
  const BipartiteGraph* graph = nullptr;
  const EmbeddingTable* embeddings = nullptr;
  const FeatureTable* features = nullptr;
  const ModelParams* params = nullptr;
  WalkConfig walk;
};

double recompute_score(const RecomputeContext& ctx, std::uint32_t user, std::uint32_t item);

struct BenchReport {
  std::size_t scorings = 0;
  std::vector<double> precomputed_ms;
  std::vector<double> recompute_ms;
  double max_abs_diff = 0.0;
  double ratio = 0.0;  // median recompute / median precomputed
};

BenchReport bench_inference(const HybridScorer& scorer, const RecomputeContext& ctx,
                            std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs, std::size_t repeats);

// ---------------------------------------------------------------------------

template <class ScoreFn>
MetricReport evaluate_with(const RankingTask& task, ScoreFn&& score) {
  MetricReport report;
  report.mode = task.mode;
  report.cutoff = task.cutoff;
  std::vector<double> scores(task.candidates.size());
  for (auto u : task.users) {
    for (std::size_t k = 0; k < task.candidates.size(); ++k) scores[k] = score(u, task.candidates[k]);
    auto ranked = top_n(task.candidates, scores, task.cutoff, task.exclusions[u]);
    std::vector<std::uint32_t> items;
    for (const auto& s : ranked) items.push_back(s.item);
    report.users.push_back(u);
    report.per_user.push_back(metrics_at_n(items, task.truth[u], task.cutoff));
  }
  finalize_report(report);
  return report;
}

}  // namespace gpatch
