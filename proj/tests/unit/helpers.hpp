#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gpatch/pipeline.hpp"

namespace testing {

using namespace gpatch;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gpatch_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// Random edge list where every node has at least one edge.
inline std::vector<Edge> random_edges(std::mt19937_64& rng, std::size_t n_users, std::size_t n_items, double density) {
  std::bernoulli_distribution keep(density);
  std::vector<Edge> edges;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    for (std::uint32_t i = 0; i < n_items; ++i) {
      if (keep(rng)) edges.push_back({u, i});
    }
  }
  for (std::uint32_t u = 0; u < n_users; ++u) edges.push_back({u, static_cast<std::uint32_t>(rng() % n_items)});
  for (std::uint32_t i = 0; i < n_items; ++i) edges.push_back({static_cast<std::uint32_t>(rng() % n_users), i});
  return edges;
}

inline NodeMatrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t dim, bool present = true) {
  std::normal_distribution<double> normal(0.0, 1.0);
  NodeMatrix m(rows, dim);
  for (double& v : m.data()) v = normal(rng);
  for (std::size_t r = 0; r < rows; ++r) m.set_present(r, present);
  return m;
}

inline EmbeddingTable random_embeddings(std::mt19937_64& rng, std::size_t n_users, std::size_t n_items,
                                        std::size_t dim) {
  EmbeddingTable t;
  t.users = random_matrix(rng, n_users, dim);
  t.items = random_matrix(rng, n_items, dim);
  return t;
}

inline FeatureTable random_features(std::mt19937_64& rng, std::size_t n_users, std::size_t n_items, std::size_t cu,
                                    std::size_t ci) {
  FeatureTable t;
  t.users = random_matrix(rng, n_users, cu);
  t.items = random_matrix(rng, n_items, ci);
  return t;
}

/// Layer representations with random blocks for the listed warm flags.
inline LayerReps random_reps(std::mt19937_64& rng, std::uint32_t depth, std::size_t dim,
                             const std::vector<bool>& warm_users, const std::vector<bool>& warm_items) {
  std::normal_distribution<double> normal(0.0, 1.0);
  LayerReps reps(depth, dim, warm_users.size(), warm_items.size());
  std::vector<double> block((depth + 1) * dim);
  for (Side side : {Side::User, Side::Item}) {
    const auto& warm = side == Side::User ? warm_users : warm_items;
    for (std::uint32_t n = 0; n < warm.size(); ++n) {
      if (!warm[n]) continue;
      for (double& v : block) v = normal(rng);
      reps.set_block({side, n}, block);
    }
  }
  return reps;
}

/// Small end-to-end fixture: synthetic data, split, BPR embeddings, layers.
struct SmallWorld {
  SyntheticData data;
  SplitSpec split;
  EmbeddingTable embeddings;
  LayerReps reps;
  FeatureTable features;
  WalkConfig walk;
  BipartiteGraph graph;

  explicit SmallWorld(std::uint64_t seed = 1, std::size_t n_users = 120, std::size_t n_items = 160,
                      std::size_t dim = 8) {
    SyntheticSpec spec;
    spec.n_users = n_users;
    spec.n_items = n_items;
    spec.latent_dim = 4;
    spec.user_content_dim = 6;
    spec.item_content_dim = 6;
    spec.density = 0.05;
    spec.seed = seed;
    data = make_synthetic(spec);
    SplitConfig sc;
    sc.seed = seed;
    split = make_split(data.interactions, sc);
    graph = split.graph({Partition::Embed});
    BprConfig bpr;
    bpr.dim = dim;
    bpr.epochs = 10;
    bpr.seed = seed;
    embeddings = train_bpr_mf(graph, bpr);
    walk.depth = 3;
    walk.walks_per_node = 5;
    walk.seed = seed;
    reps = precompute_all(graph, embeddings, walk);
    features = data.features_for(split.interner);
  }

  ModelShape shape(std::size_t hidden = 8, std::size_t out = 8) const {
    ModelShape s;
    s.depth = walk.depth;
    s.dim = reps.dim();
    s.user_content_dim = features.users.dim();
    s.item_content_dim = features.items.dim();
    s.hidden = {hidden};
    s.out_dim = out;
    return s;
  }
};

}  // namespace testing
