#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gpatch/dataio.hpp"
#include "gpatch/embedder.hpp"
#include "gpatch/evaluator.hpp"
#include "gpatch/trainer.hpp"
#include "gpatch/walker.hpp"

namespace gpatch {

inline constexpr const char* kVersion = "0.1.0";

/// SHA-256 of a file's bytes, lowercase hex.
std::string file_digest(const std::filesystem::path& path);

/// Flat `key=value` record of a run: configs, seeds, artifact paths and
/// digests, and for every artifact the digests of the inputs it was made from.
class RunManifest {
 public:
  static RunManifest load_or_empty(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Stage artifacts live in one directory next to `run_manifest.txt`.
class Workdir {
 public:
  explicit Workdir(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path file(const std::string& name) const { return root_ / name; }
  RunManifest& manifest() { return manifest_; }

  /// Records an artifact's file digest and the current digests of `inputs`.
  void record(const std::string& artifact, const std::filesystem::path& path, const std::vector<std::string>& inputs);
  /// Path of a recorded artifact after checking that neither it nor its
  /// inputs changed since it was recorded. Throws DataError unless `force`.
  std::filesystem::path require(const std::string& artifact, bool force) const;
  void set_config(const std::string& stage, const std::string& key, const std::string& value);
  void save() const;

 private:
  std::filesystem::path root_;
  RunManifest manifest_;
};

struct SplitStage {
  std::filesystem::path interactions;
  SplitConfig config;
};

struct EmbedStage {
  BprConfig config;
  std::optional<std::filesystem::path> external_users;  // vector files from another embedding model
  std::optional<std::filesystem::path> external_items;
  bool strict = false;
};

struct TrainStage {
  TrainConfig config;
  std::vector<std::size_t> hidden = {200};
  std::size_t out_dim = 200;
  std::optional<std::filesystem::path> user_features;
  std::optional<std::filesystem::path> item_features;
  bool warm_features_optional = false;
  bool normalize_features = false;
};

struct StageOptions {
  bool force = false;
  bool deterministic = false;
  unsigned threads = 1;
};

std::vector<std::string> run_split(Workdir& wd, const SplitStage& stage, const StageOptions& opts);
std::vector<std::string> run_embed(Workdir& wd, const EmbedStage& stage, const StageOptions& opts);
void run_precompute(Workdir& wd, const WalkConfig& walk, const StageOptions& opts);
FitResult run_train(Workdir& wd, const TrainStage& stage, const StageOptions& opts);

/// Everything a trained workdir needs for scoring.
struct LoadedRun {
  SplitSpec split;
  EmbeddingTable embeddings;
  LayerReps reps;
  FeatureTable features;
  ModelParams params;
  WalkConfig walk;
};

LoadedRun load_run(Workdir& wd, const StageOptions& opts);
FeatureTable load_run_features(Workdir& wd, const SplitSpec& split, const StageOptions& opts);

std::vector<MetricReport> run_eval(Workdir& wd, const std::vector<TaskMode>& modes, std::size_t cutoff,
                                   const StageOptions& opts);

struct Recommendation {
  std::string user;
  std::vector<std::pair<std::string, double>> items;
  std::string error;  // set when the user could not be served
};

std::vector<Recommendation> run_recommend(Workdir& wd, const std::vector<std::string>& users, std::size_t n,
                                          const StageOptions& opts);

}  // namespace gpatch
