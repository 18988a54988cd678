// gpatch: cold-start recommendation pipeline.
//
//   synth -> split -> embed -> precompute -> train -> eval / recommend / bench
//
// Every stage reads and writes artifacts in --workdir and records them with
// digests in run_manifest.txt.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gpatch/pipeline.hpp"

namespace {

using namespace gpatch;

struct Globals {
  std::string workdir = ".";
  StageOptions stage;
};

void warn_all(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

void add_split_options(CLI::App* cmd, SplitStage& s, const std::string& seed_flag) {
  cmd->add_option("--interactions", s.interactions, "Interaction file, user<TAB>item per line")->required();
  cmd->add_option("--cold-frac", s.config.cold_item_frac, "Fraction of items held out as cold-start items");
  cmd->add_option("--ratios", s.config.ratios, "embed,train,val,test fractions of warm-item interactions")
      ->delimiter(',')
      ->expected(4);
  cmd->add_option(seed_flag, s.config.seed, "Split seed");
}

void add_embed_options(CLI::App* cmd, EmbedStage& e) {
  cmd->add_option("--dim", e.config.dim, "Embedding size d");
  cmd->add_option("--embed-lr", e.config.lr, "BPR-MF SGD learning rate");
  cmd->add_option("--embed-l2", e.config.l2, "BPR-MF L2 coefficient");
  cmd->add_option("--embed-epochs", e.config.epochs, "BPR-MF epochs");
  cmd->add_option("--embed-init-std", e.config.init_std, "BPR-MF initialization standard deviation");
  cmd->add_option("--embed-seed", e.config.seed, "BPR-MF seed");
  cmd->add_option("--user-embeddings", e.external_users, "External user embedding file (skips BPR-MF)");
  cmd->add_option("--item-embeddings", e.external_items, "External item embedding file (skips BPR-MF)");
  cmd->add_flag("--strict", e.strict, "Missing warm embeddings are errors");
}

void add_walk_options(CLI::App* cmd, WalkConfig& w) {
  cmd->add_option("--depth", w.depth, "Walk length K (layers 0..K)");
  cmd->add_option("--walks", w.walks_per_node, "Walks per node S");
  cmd->add_option("--walk-seed", w.seed, "Walk seed");
}

void add_train_options(CLI::App* cmd, TrainStage& t) {
  cmd->add_option("--lr", t.config.lr, "Adam learning rate");
  cmd->add_option("--batch-size", t.config.batch_size, "Minibatch size");
  cmd->add_option("--l2", t.config.l2, "L2 coefficient on MLP weights and layer weights");
  cmd->add_option("--tau", t.config.tau, "Representation dropout ratio");
  cmd->add_option("--n-neg", t.config.n_neg, "Negatives per positive");
  cmd->add_option("--max-epochs", t.config.max_epochs, "Epoch limit");
  cmd->add_option("--patience", t.config.patience, "Epochs without validation AUC improvement before stopping");
  cmd->add_option("--train-seed", t.config.seed, "Training seed");
  cmd->add_flag("--detach-patch-input", t.config.detach_patch_input,
                "Stop patching-loss gradients at the layer-weighted input");
  cmd->add_option("--hidden", t.hidden, "Hidden layer sizes of the patching networks")->delimiter(',');
  cmd->add_option("--out-dim", t.out_dim, "Patching network output size");
  cmd->add_option("--user-features", t.user_features, "User content file");
  cmd->add_option("--item-features", t.item_features, "Item content file");
  cmd->add_flag("--warm-features-optional", t.warm_features_optional, "Warm nodes may lack content rows");
  cmd->add_flag("--normalize-features", t.normalize_features, "L2-normalize content rows");
}

std::vector<TaskMode> parse_modes(const std::string& mode) {
  if (mode == "all") return {TaskMode::Hybrid, TaskMode::Warm, TaskMode::Cold};
  return {parse_task(mode)};
}

void print_fit(const FitResult& r) {
  std::cout << "best epoch " << r.best_epoch << ", validation AUC " << r.best_auc << " (" << r.log.size()
            << " epochs)\n";
}

// Global flags plus the active subcommand's flags, loadable with --config.
void snapshot_config(const CLI::App& app, const Workdir& wd, const std::string& name) {
  std::istringstream all(app.config_to_str(true, false));
  std::ofstream out(wd.file(name + ".config"));
  for (std::string line; std::getline(all, line);) {
    const auto eq = line.find('=');
    const auto dot = line.find('.');
    const bool global = dot == std::string::npos || dot > eq;
    if (global || line.rfind(name + ".", 0) == 0) out << line << '\n';
  }
}

int run(int argc, char** argv) {
  CLI::App app{"gpatch: graph-based cold-start recommendation (GWarmer + patching networks)"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Read flags from a key=value file");
  app.require_subcommand(1);
  Globals g;
  app.add_option("-w,--workdir", g.workdir, "Directory holding stage artifacts and run_manifest.txt");
  app.add_option("--threads", g.stage.threads, "Worker threads");
  app.add_flag("--deterministic", g.stage.deterministic, "Zero wall-clock fields in written artifacts");
  app.add_flag("--force", g.stage.force, "Use upstream artifacts even when their digests are stale");

  SyntheticSpec synth;
  std::string synth_out = "synthetic";
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset with content features");
  c_synth->add_option("--out-dir", synth_out, "Output directory");
  c_synth->add_option("--users", synth.n_users, "Users");
  c_synth->add_option("--items", synth.n_items, "Items");
  c_synth->add_option("--latent-dim", synth.latent_dim, "Latent preference dimension");
  c_synth->add_option("--user-content-dim", synth.user_content_dim, "User content dimension (0 = none)");
  c_synth->add_option("--item-content-dim", synth.item_content_dim, "Item content dimension");
  c_synth->add_option("--rho", synth.rho, "Content-preference correlation in [0, 1]");
  c_synth->add_option("--density", synth.density, "Interaction density");
  c_synth->add_option("--noise", synth.affinity_noise, "Affinity noise standard deviation");
  c_synth->add_option("--seed", synth.seed, "Seed");

  SplitStage split;
  auto* c_split = app.add_subcommand("split", "Cold-start split: cold items, embed/train/val/test partitions");
  add_split_options(c_split, split, "--seed");

  EmbedStage embed;
  auto* c_embed = app.add_subcommand("embed", "Train BPR-MF embeddings on the embed partition, or import external ones");
  add_embed_options(c_embed, embed);

  WalkConfig walk;
  auto* c_pre = app.add_subcommand("precompute", "Sample random walks and pool layer representations");
  add_walk_options(c_pre, walk);

  TrainStage train;
  auto* c_train = app.add_subcommand("train", "Jointly train layer weights and patching networks");
  add_train_options(c_train, train);

  std::string mode = "all";
  std::size_t topn = 20;
  auto* c_eval = app.add_subcommand("eval", "All-ranking evaluation on the test partition");
  c_eval->add_option("--mode", mode, "hybrid, warm, cold or all")->check(CLI::IsMember({"hybrid", "warm", "cold", "all"}));
  c_eval->add_option("--topn", topn, "Cutoff N");

  std::vector<std::string> rec_users;
  std::size_t rec_n = 10;
  auto* c_rec = app.add_subcommand("recommend", "Top-N items for the given users");
  c_rec->add_option("--users", rec_users, "External user IDs")->delimiter(',')->required();
  c_rec->add_option("--topn", rec_n, "Items per user");

  std::size_t bench_pairs = 10000, bench_repeats = 3;
  std::uint64_t bench_seed = 0;
  auto* c_bench = app.add_subcommand("bench", "Time stored-representation scoring against full recomputation");
  c_bench->add_option("--pairs", bench_pairs, "Scorings per measurement");
  c_bench->add_option("--repeats", bench_repeats, "Measurements");
  c_bench->add_option("--seed", bench_seed, "Pair sampling seed");

  std::vector<double> taus = {0.0, 0.25, 0.5, 0.75, 1.0};
  TrainStage sweep_train;
  auto* c_sweep = app.add_subcommand("sweep", "Train and evaluate over dropout ratios");
  c_sweep->add_option("--taus", taus, "Dropout ratios")->delimiter(',');
  add_train_options(c_sweep, sweep_train);
  c_sweep->add_option("--topn", topn, "Cutoff N");

  SplitStage p_split;
  EmbedStage p_embed;
  WalkConfig p_walk;
  TrainStage p_train;
  auto* c_run = app.add_subcommand("run", "Whole pipeline: split, embed, precompute, train, eval");
  add_split_options(c_run, p_split, "--split-seed");
  add_embed_options(c_run, p_embed);
  add_walk_options(c_run, p_walk);
  add_train_options(c_run, p_train);
  c_run->add_option("--topn", topn, "Cutoff N");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Workdir wd(g.workdir);
  const auto* cmd = app.get_subcommands().front();
  if (cmd != c_synth && cmd != c_run) snapshot_config(app, wd, cmd->get_name());

  if (cmd == c_synth) {
    auto data = make_synthetic(synth);
    std::filesystem::create_directories(synth_out);
    std::filesystem::path dir(synth_out);
    write_interactions(dir / "interactions.tsv", data.interactions);
    if (synth.user_content_dim > 0) write_vector_text(dir / "user_features.txt", data.user_content, data.user_ids);
    write_vector_text(dir / "item_features.txt", data.item_content, data.item_ids);
    std::cout << "wrote " << data.interactions.size() << " interactions to " << (dir / "interactions.tsv").string()
              << '\n';
  } else if (cmd == c_split) {
    warn_all(run_split(wd, split, g.stage));
    auto spec = read_split(wd.file("split.tsv"));
    std::cout << "split: " << spec.n_users() << " users, " << spec.n_items() << " items, "
              << spec.cold_items().size() << " cold items; embed " << spec.part(Partition::Embed).size() << ", train "
              << spec.part(Partition::Train).size() << ", val " << spec.part(Partition::Val).size() << ", test "
              << spec.part(Partition::Test).size() << '\n';
  } else if (cmd == c_embed) {
    warn_all(run_embed(wd, embed, g.stage));
  } else if (cmd == c_pre) {
    run_precompute(wd, walk, g.stage);
  } else if (cmd == c_train) {
    print_fit(run_train(wd, train, g.stage));
  } else if (cmd == c_eval) {
    auto reports = run_eval(wd, parse_modes(mode), topn, g.stage);
    write_report_table(std::cout, reports);
    for (const auto& r : reports) warn_all(r.warnings);
  } else if (cmd == c_rec) {
    bool failed = false;
    for (const auto& rec : run_recommend(wd, rec_users, rec_n, g.stage)) {
      if (!rec.error.empty()) {
        std::cerr << "error: " << rec.error << '\n';
        failed = true;
        continue;
      }
      for (const auto& [item, score] : rec.items) std::cout << rec.user << '\t' << item << '\t' << score << '\n';
    }
    return failed ? 2 : 0;
  } else if (cmd == c_bench) {
    LoadedRun loaded = load_run(wd, g.stage);
    HybridScorer scorer(loaded.params, loaded.reps, loaded.features, g.stage.threads);
    RecomputeContext ctx;
    BipartiteGraph graph = loaded.split.graph({Partition::Embed});
    ctx.graph = &graph;
    ctx.embeddings = &loaded.embeddings;
    ctx.features = &loaded.features;
    ctx.params = &loaded.params;
    ctx.walk = loaded.walk;
    Rng rng = make_rng(bench_seed, Stream::Validation, 77);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs(bench_pairs);
    for (auto& p : pairs) {
      p = {uniform_index(rng, static_cast<std::uint32_t>(loaded.split.n_users())),
           uniform_index(rng, static_cast<std::uint32_t>(loaded.split.n_items()))};
    }
    auto report = bench_inference(scorer, ctx, pairs, bench_repeats);
    std::printf("scorings %zu, repeats %zu\n", report.scorings, report.precomputed_ms.size());
    for (std::size_t k = 0; k < report.precomputed_ms.size(); ++k) {
      std::printf("  run %zu: stored %.3f ms, recompute %.3f ms\n", k + 1, report.precomputed_ms[k],
                  report.recompute_ms[k]);
    }
    std::printf("max |difference| %.3g, speedup %.2fx\n", report.max_abs_diff, report.ratio);
  } else if (cmd == c_sweep) {
    LoadedRun loaded;
    loaded.split = read_split(wd.require("split", g.stage.force));
    loaded.reps = LayerReps::load(wd.require("layers", g.stage.force));
    // Feature artifacts come from the flags when given, otherwise from the last train run.
    for (Side side : {Side::User, Side::Item}) {
      const auto& path = side == Side::User ? sweep_train.user_features : sweep_train.item_features;
      if (path) wd.record(std::string(side_name(side)) + "_features", std::filesystem::absolute(*path), {});
    }
    loaded.features = load_run_features(wd, loaded.split, g.stage);
    ModelShape shape;
    shape.depth = loaded.reps.depth();
    shape.dim = loaded.reps.dim();
    shape.user_content_dim = loaded.features.users.dim();
    shape.item_content_dim = loaded.features.items.dim();
    shape.hidden = sweep_train.hidden;
    shape.out_dim = sweep_train.out_dim;
    TrainData data = make_train_data(loaded.split, loaded.reps, loaded.features, sweep_train.config.seed);
    RankingTask task = make_task(loaded.split, TaskMode::Hybrid, topn);
    std::ofstream out(wd.file("sweep.txt"));
    out << "tau, recall, precision, ndcg\n";
    for (double tau : taus) {
      TrainConfig cfg = sweep_train.config;
      cfg.tau = tau;
      cfg.threads = g.stage.threads;
      FitResult fitted = fit(data, ModelParams::init(shape, cfg.seed), cfg);
      auto report = evaluate(task, HybridScorer(fitted.best, loaded.reps, loaded.features, g.stage.threads), g.stage.threads);
      char line[160];
      std::snprintf(line, sizeof(line), "%.4g, %.6f, %.6f, %.6f\n", tau, report.mean.recall, report.mean.precision,
                    report.mean.ndcg);
      out << line;
      std::cout << line;
    }
  } else if (cmd == c_run) {
    snapshot_config(app, wd, "run");
    warn_all(run_split(wd, p_split, g.stage));
    warn_all(run_embed(wd, p_embed, g.stage));
    run_precompute(wd, p_walk, g.stage);
    print_fit(run_train(wd, p_train, g.stage));
    auto reports = run_eval(wd, parse_modes("all"), topn, g.stage);
    write_report_table(std::cout, reports);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gpatch::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
