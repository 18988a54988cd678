#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gpatch/dataio.hpp"
#include "gpatch/evaluator.hpp"
#include "gpatch/model.hpp"

namespace gpatch {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 1024;
  double l2 = 1e-5;
  double tau = 0.5;
  std::uint32_t n_neg = 4;
  std::uint32_t max_epochs = 100;
  std::uint32_t patience = 10;
  std::uint64_t seed = 0;
  bool detach_patch_input = false;
  unsigned threads = 1;

  void validate() const;
};

/// Adam with bias correction. Moments mirror ModelParams::tensors().
class AdamState {
 public:
  explicit AdamState(const ModelParams& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ModelParams& params, ModelParams& grads, double lr);
  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// For each positive (u, .), n_neg items drawn uniformly from `pool`,
/// redrawing up to 100 times while (u, j) is an edge of `known`.
std::vector<Example> sample_negatives(const BipartiteGraph& known, std::span<const Edge> positives, std::uint32_t n_neg,
                                      std::span<const std::uint32_t> pool, Rng& rng,
                                      std::vector<std::string>* warnings = nullptr);

struct ValidationSet {
  std::vector<Edge> positives;
  std::vector<Edge> negatives;
};

/// Validation positives plus one fixed negative per positive drawn from all
/// items, avoiding any known interaction of the user.
ValidationSet make_validation_set(const SplitSpec& split, std::uint64_t seed);

struct TrainData {
  const LayerReps* reps = nullptr;
  const FeatureTable* features = nullptr;
  std::vector<Edge> positives;            // warm-warm training interactions
  BipartiteGraph known;                   // interactions rejected as negatives
  std::vector<std::uint32_t> negative_pool;
  ValidationSet validation;
};

/// Builds TrainData from a split: positives = train partition, known =
/// embed + train, pool = warm items.
TrainData make_train_data(const SplitSpec& split, const LayerReps& reps, const FeatureTable& features,
                          std::uint64_t seed);

/// The epoch's examples before batching: shuffled positives and fresh
/// negatives with mask draws. Deterministic in (seed, epoch).
std::vector<Example> epoch_examples(const TrainData& data, const TrainConfig& cfg, std::uint32_t epoch,
                                    std::vector<std::string>* warnings = nullptr);

/// One pass of minibatch Adam. Returns the mean per-example data loss
/// measured before each batch's update.
double train_epoch(const TrainData& data, ModelParams& params, AdamState& adam, const TrainConfig& cfg,
                   std::uint32_t epoch);

double validate_auc(const ValidationSet& val, const HybridScorer& scorer);

struct EpochRecord {
  std::uint32_t epoch = 0;
  double loss = 0.0;
  double val_auc = 0.0;
  double elapsed_ms = 0.0;
};

struct FitResult {
  ModelParams best;
  double best_auc = 0.0;
  std::uint32_t best_epoch = 0;
  std::vector<EpochRecord> log;
  bool aborted = false;
  std::string abort_reason;
};

/// Early stopping on validation AUC; returns the best epoch's parameters.
/// A numeric failure stops training and returns the last good parameters.
FitResult fit(const TrainData& data, const ModelParams& initial, const TrainConfig& cfg,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

/// `epoch, loss, val_auc, elapsed_ms` lines.
void write_train_log(std::ostream& out, std::span<const EpochRecord> log);

}  // namespace gpatch
