#include "gpatch/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "text_util.hpp"

namespace gpatch {

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char pair[3];
  for (unsigned int k = 0; k < len; ++k) {
    std::snprintf(pair, sizeof(pair), "%02x", md[k]);
    hex += pair;
  }
  return hex;
}

RunManifest RunManifest::load_or_empty(const std::filesystem::path& path) {
  RunManifest m;
  std::ifstream in(path);
  if (!in) return m;
  std::string line;
  while (std::getline(in, line)) {
    if (text::skippable(line)) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path.string() + ": malformed line '" + line + "'");
    m.values_[line.substr(0, eq)] = std::string(text::trim(line.substr(eq + 1)));
  }
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# gpatch run manifest\n";
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
}

std::optional<std::string> RunManifest::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

Workdir::Workdir(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
  manifest_ = RunManifest::load_or_empty(file("run_manifest.txt"));
  manifest_.set("version", kVersion);
}

void Workdir::record(const std::string& artifact, const std::filesystem::path& path,
                     const std::vector<std::string>& inputs) {
  const std::string prefix = "artifact." + artifact;
  auto rel = path.parent_path() == root_ ? path.filename() : path;
  manifest_.set(prefix + ".path", rel.string());
  manifest_.set(prefix + ".sha256", file_digest(path));
  std::string joined;
  for (const auto& in : inputs) {
    auto sha = manifest_.get("artifact." + in + ".sha256");
    if (!sha) throw DataError("artifact '" + artifact + "' depends on unrecorded '" + in + "'");
    if (!joined.empty()) joined += ',';
    joined += in + ":" + *sha;
  }
  manifest_.set(prefix + ".inputs", joined);
  save();
}

std::filesystem::path Workdir::require(const std::string& artifact, bool force) const {
  const std::string prefix = "artifact." + artifact;
  auto rel = manifest_.get(prefix + ".path");
  if (!rel) throw DataError("missing upstream artifact '" + artifact + "' in " + root_.string() + "; run its stage first");
  std::filesystem::path path = std::filesystem::path(*rel).is_absolute() ? std::filesystem::path(*rel) : root_ / *rel;
  if (!std::filesystem::exists(path)) throw DataError("artifact '" + artifact + "' file missing: " + path.string());
  if (force) return path;
  if (file_digest(path) != manifest_.get(prefix + ".sha256").value_or("")) {
    throw DataError("artifact '" + artifact + "' changed since it was recorded (" + path.string() +
                    "); rerun its stage or pass --force");
  }
  auto inputs = manifest_.get(prefix + ".inputs").value_or("");
  if (!inputs.empty()) {
    for (auto entry : text::split(inputs, ',')) {
      auto colon = entry.find(':');
      std::string name(entry.substr(0, colon));
      std::string sha(entry.substr(colon + 1));
      if (manifest_.get("artifact." + name + ".sha256").value_or("") != sha) {
        throw DataError("artifact '" + artifact + "' is stale: upstream '" + name +
                        "' was regenerated; rerun or pass --force");
      }
    }
  }
  return path;
}

void Workdir::set_config(const std::string& stage, const std::string& key, const std::string& value) {
  manifest_.set("config." + stage + "." + key, value);
}

void Workdir::save() const { manifest_.save(file("run_manifest.txt")); }

namespace {

std::string num(double v) {
  std::string s;
  text::append_double(s, v);
  return s;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (auto x : v) {
    if (!s.empty()) s += ',';
    s += std::to_string(x);
  }
  return s;
}

}  // namespace

std::vector<std::string> run_split(Workdir& wd, const SplitStage& stage, const StageOptions&) {
  stage.config.validate();
  auto interactions = read_interactions(stage.interactions);
  SplitSpec split = make_split(interactions, stage.config);
  auto out = wd.file("split.tsv");
  write_split(out, split);
  wd.manifest().set("input.interactions.path", std::filesystem::absolute(stage.interactions).string());
  wd.manifest().set("input.interactions.sha256", file_digest(stage.interactions));
  wd.set_config("split", "cold_item_frac", num(stage.config.cold_item_frac));
  wd.set_config("split", "ratios", num(stage.config.ratios[0]) + "," + num(stage.config.ratios[1]) + "," +
                                       num(stage.config.ratios[2]) + "," + num(stage.config.ratios[3]));
  wd.set_config("split", "seed", std::to_string(stage.config.seed));
  wd.record("split", out, {});
  return split.warnings;
}

std::vector<std::string> run_embed(Workdir& wd, const EmbedStage& stage, const StageOptions& opts) {
  SplitSpec split = read_split(wd.require("split", opts.force));
  std::vector<std::string> warnings;
  EmbeddingTable emb;
  if (stage.external_users || stage.external_items) {
    if (!stage.external_users || !stage.external_items) throw UsageError("external embeddings need both user and item files");
    auto warm_users = split.warm_mask(Side::User);
    auto warm_items = split.warm_mask(Side::Item);
    emb.users = load_embeddings(*stage.external_users, Side::User, split.interner, {stage.strict, warm_users}, &warnings);
    emb.items = load_embeddings(*stage.external_items, Side::Item, split.interner, {stage.strict, warm_items}, &warnings);
    if (emb.users.dim() != emb.items.dim()) throw DataError("user and item embeddings differ in dimension");
    // Cold nodes never carry embeddings into the pipeline.
    for (std::uint32_t u = 0; u < split.n_users(); ++u) {
      if (split.cold_user[u]) emb.users.set_present(u, false);
    }
    for (std::uint32_t i = 0; i < split.n_items(); ++i) {
      if (split.cold_item[i]) emb.items.set_present(i, false);
    }
    wd.set_config("embed", "source", "external");
  } else {
    emb = train_bpr_mf(split.graph({Partition::Embed}), stage.config);
    wd.set_config("embed", "source", "bpr-mf");
    wd.set_config("embed", "dim", std::to_string(stage.config.dim));
    wd.set_config("embed", "lr", num(stage.config.lr));
    wd.set_config("embed", "l2", num(stage.config.l2));
    wd.set_config("embed", "epochs", std::to_string(stage.config.epochs));
    wd.set_config("embed", "init_std", num(stage.config.init_std));
    wd.set_config("embed", "seed", std::to_string(stage.config.seed));
  }
  (void)opts;
  write_vector_binary(wd.file("user_emb.gpe"), emb.users, split.interner.ids(Side::User));
  write_vector_binary(wd.file("item_emb.gpe"), emb.items, split.interner.ids(Side::Item));
  wd.record("user_emb", wd.file("user_emb.gpe"), {"split"});
  wd.record("item_emb", wd.file("item_emb.gpe"), {"split"});
  return warnings;
}

namespace {

EmbeddingTable load_run_embeddings(Workdir& wd, const SplitSpec& split, bool force) {
  EmbeddingTable emb;
  emb.users = read_vector_file(wd.require("user_emb", force), Side::User, split.interner).table;
  emb.items = read_vector_file(wd.require("item_emb", force), Side::Item, split.interner).table;
  return emb;
}

WalkConfig recorded_walk(const Workdir& wd) {
  auto& m = const_cast<Workdir&>(wd).manifest();
  WalkConfig walk;
  auto get = [&](const char* key) {
    auto v = m.get(std::string("config.precompute.") + key);
    if (!v) throw DataError(std::string("run manifest lacks config.precompute.") + key);
    return text::parse_uint(*v, "run manifest");
  };
  walk.depth = static_cast<std::uint32_t>(get("depth"));
  walk.walks_per_node = static_cast<std::uint32_t>(get("walks"));
  walk.seed = get("seed");
  return walk;
}

}  // namespace

void run_precompute(Workdir& wd, const WalkConfig& walk, const StageOptions& opts) {
  SplitSpec split = read_split(wd.require("split", opts.force));
  EmbeddingTable emb = load_run_embeddings(wd, split, opts.force);
  LayerReps reps = precompute_all(split.graph({Partition::Embed}), emb, walk, opts.threads);
  reps.save(wd.file("layers.gpl"));
  wd.set_config("precompute", "depth", std::to_string(walk.depth));
  wd.set_config("precompute", "walks", std::to_string(walk.walks_per_node));
  wd.set_config("precompute", "seed", std::to_string(walk.seed));
  wd.record("layers", wd.file("layers.gpl"), {"split", "user_emb", "item_emb"});
}

FeatureTable load_run_features(Workdir& wd, const SplitSpec& split, const StageOptions& opts) {
  FeatureTable features;
  const bool optional = wd.manifest().get("config.train.warm_features_optional").value_or("0") == "1";
  const bool normalize = wd.manifest().get("config.train.normalize_features").value_or("0") == "1";
  for (Side side : {Side::User, Side::Item}) {
    const std::string name = std::string(side_name(side)) + "_features";
    auto cold = side == Side::User ? split.cold_user : split.cold_item;
    if (!wd.manifest().get("artifact." + name + ".path")) {
      features.side(side) = NodeMatrix(split.interner.size(side), 0);
      continue;
    }
    features.side(side) = load_features(wd.require(name, opts.force), split.interner, side, {cold, optional, normalize});
  }
  return features;
}

FitResult run_train(Workdir& wd, const TrainStage& stage, const StageOptions& opts) {
  SplitSpec split = read_split(wd.require("split", opts.force));
  LayerReps reps = LayerReps::load(wd.require("layers", opts.force));

  std::vector<std::string> feature_inputs;
  for (Side side : {Side::User, Side::Item}) {
    const auto& path = side == Side::User ? stage.user_features : stage.item_features;
    const std::string name = std::string(side_name(side)) + "_features";
    if (path) {
      wd.record(name, std::filesystem::absolute(*path), {});
      feature_inputs.push_back(name);
    }
  }
  if (!stage.item_features && !split.cold_items().empty()) {
    throw UsageError("cold items need content: pass --item-features");
  }
  wd.set_config("train", "warm_features_optional", stage.warm_features_optional ? "1" : "0");
  wd.set_config("train", "normalize_features", stage.normalize_features ? "1" : "0");
  FeatureTable features = load_run_features(wd, split, opts);

  ModelShape shape;
  shape.depth = reps.depth();
  shape.dim = reps.dim();
  shape.user_content_dim = features.users.dim();
  shape.item_content_dim = features.items.dim();
  shape.hidden = stage.hidden;
  shape.out_dim = stage.out_dim;

  const auto& cfg = stage.config;
  TrainConfig run_cfg = cfg;
  run_cfg.threads = opts.threads;
  TrainData data = make_train_data(split, reps, features, cfg.seed);
  FitResult result = fit(data, ModelParams::init(shape, cfg.seed), run_cfg);

  result.best.save(wd.file("model.gpm"));
  {
    std::ofstream log(wd.file("train_log.txt"));
    auto records = result.log;
    if (opts.deterministic) {
      for (auto& r : records) r.elapsed_ms = 0.0;
    }
    write_train_log(log, records);
  }
  wd.set_config("train", "lr", num(cfg.lr));
  wd.set_config("train", "batch_size", std::to_string(cfg.batch_size));
  wd.set_config("train", "l2", num(cfg.l2));
  wd.set_config("train", "tau", num(cfg.tau));
  wd.set_config("train", "n_neg", std::to_string(cfg.n_neg));
  wd.set_config("train", "max_epochs", std::to_string(cfg.max_epochs));
  wd.set_config("train", "patience", std::to_string(cfg.patience));
  wd.set_config("train", "seed", std::to_string(cfg.seed));
  wd.set_config("train", "detach_patch_input", cfg.detach_patch_input ? "1" : "0");
  wd.set_config("train", "hidden", join_sizes(stage.hidden));
  wd.set_config("train", "out_dim", std::to_string(stage.out_dim));
  wd.set_config("train", "best_epoch", std::to_string(result.best_epoch));
  std::vector<std::string> inputs = {"split", "layers"};
  inputs.insert(inputs.end(), feature_inputs.begin(), feature_inputs.end());
  wd.record("model", wd.file("model.gpm"), inputs);
  if (result.aborted) throw NumericError("training aborted, best checkpoint kept: " + result.abort_reason);
  return result;
}

LoadedRun load_run(Workdir& wd, const StageOptions& opts) {
  LoadedRun run;
  run.split = read_split(wd.require("split", opts.force));
  run.embeddings = load_run_embeddings(wd, run.split, opts.force);
  run.reps = LayerReps::load(wd.require("layers", opts.force));
  run.features = load_run_features(wd, run.split, opts);
  run.params = ModelParams::load(wd.require("model", opts.force));
  run.walk = recorded_walk(wd);
  return run;
}

std::vector<MetricReport> run_eval(Workdir& wd, const std::vector<TaskMode>& modes, std::size_t cutoff,
                                   const StageOptions& opts) {
  LoadedRun run = load_run(wd, opts);
  HybridScorer scorer(run.params, run.reps, run.features, opts.threads);
  std::vector<MetricReport> reports;
  for (auto mode : modes) {
    auto report = evaluate(make_task(run.split, mode, cutoff), scorer, opts.threads);
    const std::string base = std::string("metrics_") + task_name(mode);
    {
      std::ofstream out(wd.file(base + ".txt"));
      write_report_records(out, report);
    }
    {
      std::ofstream out(wd.file(base + ".csv"));
      write_report_csv(out, report, run.split.interner);
    }
    wd.record(base, wd.file(base + ".txt"), {"model"});
    reports.push_back(std::move(report));
  }
  std::ofstream table(wd.file("report.txt"));
  write_report_table(table, reports);
  return reports;
}

std::vector<Recommendation> run_recommend(Workdir& wd, const std::vector<std::string>& users, std::size_t n,
                                          const StageOptions& opts) {
  LoadedRun run = load_run(wd, opts);
  HybridScorer scorer(run.params, run.reps, run.features, opts.threads);
  RankingTask task = make_task(run.split, TaskMode::Hybrid, n);
  std::vector<Recommendation> out;
  for (const auto& id : users) {
    Recommendation rec;
    rec.user = id;
    auto index = run.split.interner.find(Side::User, id);
    if (!index) {
      rec.error = "unknown user id '" + id + "'";
    } else {
      try {
        for (const auto& s : rank_candidates(*index, task, scorer)) {
          rec.items.emplace_back(run.split.interner.id_of(Side::Item, s.item), s.score);
        }
      } catch (const Error& e) {
        rec.error = e.what();
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace gpatch
