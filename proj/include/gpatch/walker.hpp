#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "gpatch/common.hpp"
#include "gpatch/graph.hpp"

namespace gpatch {

struct WalkConfig {
  std::uint32_t depth = 3;             // K: steps per walk, giving layers 0..K
  std::uint32_t walks_per_node = 25;   // S
  std::uint64_t seed = 0;

  void validate() const;
};

/// S walks of K steps from one root. Entry (s, k-1) holds the node index at
/// walk position k; position k lies on the root's side when k is even.
struct WalkSet {
  NodeRef root;
  std::uint32_t depth = 0;
  std::uint32_t walks = 0;
  std::vector<std::uint32_t> nodes;

  std::uint32_t at(std::uint32_t walk, std::uint32_t position) const { return nodes[walk * depth + position - 1]; }
  static Side side_at(Side root_side, std::uint32_t position) {
    return position % 2 == 0 ? root_side : opposite(root_side);
  }
};

/// Seed of the RNG driving walk `ordinal` from `root`.
std::uint64_t walk_seed(std::uint64_t master, NodeRef root, std::uint32_t ordinal);

/// Throws DataError("cold node has no walks") for a root with no neighbors.
WalkSet sample_walks(const BipartiteGraph& graph, NodeRef root, const WalkConfig& cfg);

/// Returns the (K+1)*d block for the root: row 0 is the root embedding, row k
/// the mean embedding at walk position k.
std::vector<double> pool_layers(const WalkSet& walks, const EmbeddingTable& emb);

/// Pooled layer representations x_t^(0..K) for every warm node. Stored per
/// side as one row of (K+1)*d doubles per node.
class LayerReps {
 public:
  LayerReps() = default;
  LayerReps(std::uint32_t depth, std::size_t dim, std::size_t n_users, std::size_t n_items);

  std::uint32_t depth() const { return depth_; }
  std::size_t dim() const { return dim_; }
  std::size_t layers() const { return depth_ + 1; }
  std::size_t n_nodes(Side s) const { return tables_.side(s).rows(); }

  bool has(NodeRef node) const { return tables_.side(node.side).has(node.index); }
  /// Throws DataError when the node has no block.
  std::span<const double> block(NodeRef node) const;
  std::span<const double> layer(NodeRef node, std::size_t k) const { return block(node).subspan(k * dim_, dim_); }
  void set_block(NodeRef node, std::span<const double> values);
  std::size_t warm_count() const { return tables_.users.present_count() + tables_.items.present_count(); }

  void save(std::ostream& out) const;
  static LayerReps load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static LayerReps load(const std::filesystem::path& path);

  friend bool operator==(const LayerReps&, const LayerReps&) = default;

 private:
  std::uint32_t depth_ = 0;
  std::size_t dim_ = 0;
  SidedTables tables_;
};

/// Walk + pool for every node with non-empty adjacency. The output does not
/// depend on `threads`.
LayerReps precompute_all(const BipartiteGraph& graph, const EmbeddingTable& emb, const WalkConfig& cfg,
                         unsigned threads = 1);

}  // namespace gpatch
