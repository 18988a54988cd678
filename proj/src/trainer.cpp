#include "gpatch/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace gpatch {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw UsageError("learning rate must be non-negative");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  if (!(l2 >= 0.0)) throw UsageError("l2 must be non-negative");
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("tau must be in [0, 1]");
  if (n_neg < 1) throw UsageError("n_neg must be >= 1");
}

AdamState::AdamState(const ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& t : const_cast<ModelParams&>(params).tensors()) {
    m_.emplace_back(t.values.size(), 0.0);
    v_.emplace_back(t.values.size(), 0.0);
  }
}

void AdamState::step(ModelParams& params, ModelParams& grads, double lr) {
  auto p = params.tensors();
  auto g = grads.tensors();
  if (p.size() != m_.size() || g.size() != m_.size()) throw DataError("adam: parameter layout changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = g[k].values[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      p[k].values[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

std::vector<Example> sample_negatives(const BipartiteGraph& known, std::span<const Edge> positives, std::uint32_t n_neg,
                                      std::span<const std::uint32_t> pool, Rng& rng, std::vector<std::string>* warnings) {
  if (pool.empty()) throw DataError("negative sampling: empty item pool");
  std::vector<Example> out;
  out.reserve(positives.size() * n_neg);
  std::vector<std::uint32_t> saturated;
  for (const Edge& pos : positives) {
    for (std::uint32_t k = 0; k < n_neg; ++k) {
      std::uint32_t item = 0;
      bool found = false;
      for (int attempt = 0; attempt <= 100; ++attempt) {
        item = pool[uniform_index(rng, static_cast<std::uint32_t>(pool.size()))];
        if (!known.has_edge(pos.user, item)) {
          found = true;
          break;
        }
      }
      if (!found && (saturated.empty() || saturated.back() != pos.user)) saturated.push_back(pos.user);
      out.push_back({pos.user, item, 0.0});
    }
  }
  if (warnings != nullptr) {
    for (auto u : saturated) {
      warnings->push_back("user #" + std::to_string(u) + ": no unobserved negative found, accepted a collision");
    }
  }
  return out;
}

ValidationSet make_validation_set(const SplitSpec& split, std::uint64_t seed) {
  ValidationSet val;
  val.positives = split.part(Partition::Val);
  if (val.positives.empty()) return val;
  BipartiteGraph all = split.graph({Partition::Embed, Partition::Train, Partition::Val, Partition::Test});
  std::vector<std::uint32_t> items(split.n_items());
  for (std::uint32_t i = 0; i < items.size(); ++i) items[i] = i;
  Rng rng = make_rng(seed, Stream::Validation);
  for (const auto& ex : sample_negatives(all, val.positives, 1, items, rng)) val.negatives.push_back({ex.user, ex.item});
  return val;
}

TrainData make_train_data(const SplitSpec& split, const LayerReps& reps, const FeatureTable& features,
                          std::uint64_t seed) {
  TrainData data;
  data.reps = &reps;
  data.features = &features;
  data.positives = split.part(Partition::Train);
  data.known = split.graph({Partition::Embed, Partition::Train});
  for (std::uint32_t i = 0; i < split.n_items(); ++i) {
    if (reps.has({Side::Item, i})) data.negative_pool.push_back(i);
  }
  data.validation = make_validation_set(split, seed);
  return data;
}

std::vector<Example> epoch_examples(const TrainData& data, const TrainConfig& cfg, std::uint32_t epoch,
                                    std::vector<std::string>* warnings) {
  Rng neg_rng = make_rng(cfg.seed, Stream::Negatives, epoch);
  std::vector<Example> examples;
  examples.reserve(data.positives.size() * (1 + cfg.n_neg));
  for (const Edge& e : data.positives) examples.push_back({e.user, e.item, 1.0});
  auto negatives = sample_negatives(data.known, data.positives, cfg.n_neg, data.negative_pool, neg_rng, warnings);
  examples.insert(examples.end(), negatives.begin(), negatives.end());
  Rng shuffle_rng = make_rng(cfg.seed, Stream::Shuffle, epoch);
  shuffle_in_place(examples, shuffle_rng);
  Rng mask_rng = make_rng(cfg.seed, Stream::Masks, epoch);
  for (auto& ex : examples) {
    ex.user_mask = draw_mask(mask_rng, cfg.tau);
    ex.item_mask = draw_mask(mask_rng, cfg.tau);
  }
  return examples;
}

double train_epoch(const TrainData& data, ModelParams& params, AdamState& adam, const TrainConfig& cfg,
                   std::uint32_t epoch) {
  cfg.validate();
  auto examples = epoch_examples(data, cfg, epoch);
  if (examples.empty()) throw DataError("no training examples");
  const LossOptions opts{cfg.l2, cfg.detach_patch_input};
  ModelParams grad;
  double total = 0.0;
  for (std::size_t begin = 0; begin < examples.size(); begin += cfg.batch_size) {
    std::span<const Example> batch(examples.data() + begin, std::min(cfg.batch_size, examples.size() - begin));
    BatchLoss loss = loss_and_gradients(batch, *data.reps, *data.features, params, opts, &grad);
    total += loss.data_loss * static_cast<double>(batch.size());
    adam.step(params, grad, cfg.lr);
  }
  if (!params.all_finite()) throw NumericError("parameters became non-finite in epoch " + std::to_string(epoch));
  return total / static_cast<double>(examples.size());
}

double validate_auc(const ValidationSet& val, const HybridScorer& scorer) {
  if (val.positives.empty() || val.negatives.empty()) throw DataError("empty validation set");
  std::vector<double> pos, neg;
  pos.reserve(val.positives.size());
  neg.reserve(val.negatives.size());
  for (const Edge& e : val.positives) pos.push_back(scorer.score(e.user, e.item));
  for (const Edge& e : val.negatives) neg.push_back(scorer.score(e.user, e.item));
  return auc(pos, neg);
}

FitResult fit(const TrainData& data, const ModelParams& initial, const TrainConfig& cfg,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  FitResult result;
  result.best = initial;
  result.best_auc = -std::numeric_limits<double>::infinity();
  ModelParams params = initial;
  AdamState adam(params);
  std::uint32_t stale = 0;
  const std::uint32_t allowed = std::max<std::uint32_t>(1, cfg.patience);
  for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto t0 = clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      rec.loss = train_epoch(data, params, adam, cfg, epoch);
      rec.val_auc = validate_auc(data.validation, HybridScorer(params, *data.reps, *data.features, cfg.threads));
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_auc > result.best_auc) {
      result.best_auc = rec.val_auc;
      result.best_epoch = epoch;
      result.best = params;
      stale = 0;
    } else if (++stale >= allowed) {
      break;
    }
  }
  return result;
}

void write_train_log(std::ostream& out, std::span<const EpochRecord> log) {
  char line[128];
  for (const auto& r : log) {
    std::snprintf(line, sizeof(line), "%u, %.10g, %.10g, %.0f\n", r.epoch, r.loss, r.val_auc, r.elapsed_ms);
    out << line;
  }
}

}  // namespace gpatch
