#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gpatch/common.hpp"

namespace gpatch {

/// One observed interaction between external user and item IDs.
struct Interaction {
  std::string user;
  std::string item;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// An interaction in dense index space.
struct Edge {
  std::uint32_t user = 0;
  std::uint32_t item = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// External-ID <-> dense-index maps, one per side. Indices are assigned in
/// first-occurrence order and are contiguous from 0.
class IdInterner {
 public:
  std::uint32_t intern(Side side, std::string_view id);
  std::optional<std::uint32_t> find(Side side, std::string_view id) const;
  std::uint32_t index_of(Side side, std::string_view id) const;  // throws DataError
  const std::string& id_of(Side side, std::uint32_t index) const;
  std::size_t size(Side side) const { return ids_[slot(side)].size(); }
  const std::vector<std::string>& ids(Side side) const { return ids_[slot(side)]; }

  friend bool operator==(const IdInterner& a, const IdInterner& b) { return a.ids_[0] == b.ids_[0] && a.ids_[1] == b.ids_[1]; }

 private:
  static std::size_t slot(Side s) { return s == Side::User ? 0 : 1; }
  std::vector<std::string> ids_[2];
  std::unordered_map<std::string, std::uint32_t> index_[2];
};

/// Undirected user-item bipartite graph in CSR form for both sides.
/// Immutable after construction.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;

  /// Duplicate edges collapse. Throws DataError on out-of-range indices.
  static BipartiteGraph from_edges(std::size_t n_users, std::size_t n_items, std::span<const Edge> edges);

  std::size_t n_users() const { return user_offsets_.empty() ? 0 : user_offsets_.size() - 1; }
  std::size_t n_items() const { return item_offsets_.empty() ? 0 : item_offsets_.size() - 1; }
  std::size_t n_nodes(Side s) const { return s == Side::User ? n_users() : n_items(); }
  std::size_t edge_count() const { return user_adj_.size(); }

  /// Sorted opposite-side indices. Throws DataError when out of range.
  std::span<const std::uint32_t> neighbors(NodeRef node) const;
  std::size_t degree(NodeRef node) const { return neighbors(node).size(); }
  bool has_edge(std::uint32_t user, std::uint32_t item) const;

  std::vector<Edge> edges() const;

  void save(std::ostream& out) const;
  static BipartiteGraph load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static BipartiteGraph load(const std::filesystem::path& path);

  friend bool operator==(const BipartiteGraph&, const BipartiteGraph&) = default;

 private:
  std::vector<std::uint64_t> user_offsets_{0};
  std::vector<std::uint32_t> user_adj_;
  std::vector<std::uint64_t> item_offsets_{0};
  std::vector<std::uint32_t> item_adj_;
};

struct GraphBuild {
  BipartiteGraph graph;
  IdInterner interner;
};

/// Interns IDs in first-occurrence order and builds the deduplicated graph.
/// Throws DataError("no interactions") on empty input.
GraphBuild build_graph(std::span<const Interaction> interactions);

/// Maps external interactions to dense edges using an existing interner.
std::vector<Edge> to_edges(std::span<const Interaction> interactions, const IdInterner& interner);

/// `user<TAB>item` per line; blank lines and `#` comments are skipped.
std::vector<Interaction> read_interactions(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path, std::span<const Interaction> interactions);

}  // namespace gpatch
