#include "gpatch/graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "text_util.hpp"

namespace gpatch {

std::uint32_t IdInterner::intern(Side side, std::string_view id) {
  auto& index = index_[slot(side)];
  auto it = index.find(std::string(id));
  if (it != index.end()) return it->second;
  auto& ids = ids_[slot(side)];
  auto next = static_cast<std::uint32_t>(ids.size());
  ids.emplace_back(id);
  index.emplace(ids.back(), next);
  return next;
}

std::optional<std::uint32_t> IdInterner::find(Side side, std::string_view id) const {
  const auto& index = index_[slot(side)];
  auto it = index.find(std::string(id));
  if (it == index.end()) return std::nullopt;
  return it->second;
}

std::uint32_t IdInterner::index_of(Side side, std::string_view id) const {
  auto found = find(side, id);
  if (!found) throw DataError(std::string("unknown ") + side_name(side) + " id '" + std::string(id) + "'");
  return *found;
}

const std::string& IdInterner::id_of(Side side, std::uint32_t index) const {
  const auto& ids = ids_[slot(side)];
  if (index >= ids.size()) throw DataError(std::string(side_name(side)) + " index out of range");
  return ids[index];
}

namespace {

void build_csr(std::size_t n, std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
               std::vector<std::uint64_t>& offsets, std::vector<std::uint32_t>& adj) {
  std::sort(pairs.begin(), pairs.end());
  offsets.assign(n + 1, 0);
  adj.clear();
  adj.reserve(pairs.size());
  for (auto [src, dst] : pairs) {
    ++offsets[src + 1];
    adj.push_back(dst);
  }
  for (std::size_t k = 0; k < n; ++k) offsets[k + 1] += offsets[k];
}

}  // namespace

BipartiteGraph BipartiteGraph::from_edges(std::size_t n_users, std::size_t n_items, std::span<const Edge> edges) {
  std::vector<Edge> unique(edges.begin(), edges.end());
  for (const auto& e : unique) {
    if (e.user >= n_users || e.item >= n_items) throw DataError("edge index out of range");
  }
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  std::vector<std::pair<std::uint32_t, std::uint32_t>> fwd, bwd;
  fwd.reserve(unique.size());
  bwd.reserve(unique.size());
  for (const auto& e : unique) {
    fwd.emplace_back(e.user, e.item);
    bwd.emplace_back(e.item, e.user);
  }
  BipartiteGraph g;
  build_csr(n_users, fwd, g.user_offsets_, g.user_adj_);
  build_csr(n_items, bwd, g.item_offsets_, g.item_adj_);
  return g;
}

std::span<const std::uint32_t> BipartiteGraph::neighbors(NodeRef node) const {
  const auto& offsets = node.side == Side::User ? user_offsets_ : item_offsets_;
  const auto& adj = node.side == Side::User ? user_adj_ : item_adj_;
  if (node.index + 1 >= offsets.size()) throw DataError("neighbors: " + to_string(node) + " out of range");
  return {adj.data() + offsets[node.index], static_cast<std::size_t>(offsets[node.index + 1] - offsets[node.index])};
}

bool BipartiteGraph::has_edge(std::uint32_t user, std::uint32_t item) const {
  if (user >= n_users()) return false;
  auto adj = neighbors({Side::User, user});
  return std::binary_search(adj.begin(), adj.end(), item);
}

std::vector<Edge> BipartiteGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(edge_count());
  for (std::uint32_t u = 0; u < n_users(); ++u) {
    for (auto i : neighbors({Side::User, u})) out.push_back({u, i});
  }
  return out;
}

// GPG1 layout: magic, u64 n_users, u64 n_items, u64 n_edges,
// u64 user_offsets[n_users+1], u32 user_adj[n_edges],
// u64 item_offsets[n_items+1], u32 item_adj[n_edges].
void BipartiteGraph::save(std::ostream& out) const {
  io::put_magic(out, "GPG1");
  io::put<std::uint64_t>(out, n_users());
  io::put<std::uint64_t>(out, n_items());
  io::put<std::uint64_t>(out, edge_count());
  for (auto v : user_offsets_) io::put(out, v);
  for (auto v : user_adj_) io::put(out, v);
  for (auto v : item_offsets_) io::put(out, v);
  for (auto v : item_adj_) io::put(out, v);
}

BipartiteGraph BipartiteGraph::load(std::istream& in) {
  io::expect_magic(in, "GPG1", "graph cache");
  auto nu = io::get<std::uint64_t>(in, "graph header");
  auto ni = io::get<std::uint64_t>(in, "graph header");
  auto ne = io::get<std::uint64_t>(in, "graph header");
  BipartiteGraph g;
  auto read_side = [&](std::uint64_t n, std::uint64_t opposite_n, std::vector<std::uint64_t>& offsets,
                       std::vector<std::uint32_t>& adj) {
    offsets.resize(n + 1);
    for (auto& v : offsets) v = io::get<std::uint64_t>(in, "graph offsets");
    adj.resize(ne);
    for (auto& v : adj) {
      v = io::get<std::uint32_t>(in, "graph adjacency");
      if (v >= opposite_n) throw DataError("graph cache: adjacency index out of range");
    }
    if (offsets.front() != 0 || offsets.back() != ne) throw DataError("graph cache: inconsistent offsets");
  };
  read_side(nu, ni, g.user_offsets_, g.user_adj_);
  read_side(ni, nu, g.item_offsets_, g.item_adj_);
  return g;
}

void BipartiteGraph::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  save(out);
}

BipartiteGraph BipartiteGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return load(in);
}

GraphBuild build_graph(std::span<const Interaction> interactions) {
  if (interactions.empty()) throw DataError("no interactions");
  GraphBuild out;
  std::vector<Edge> edges;
  edges.reserve(interactions.size());
  for (const auto& r : interactions) {
    edges.push_back({out.interner.intern(Side::User, r.user), out.interner.intern(Side::Item, r.item)});
  }
  out.graph = BipartiteGraph::from_edges(out.interner.size(Side::User), out.interner.size(Side::Item), edges);
  return out;
}

std::vector<Edge> to_edges(std::span<const Interaction> interactions, const IdInterner& interner) {
  std::vector<Edge> edges;
  edges.reserve(interactions.size());
  for (const auto& r : interactions) {
    edges.push_back({interner.index_of(Side::User, r.user), interner.index_of(Side::Item, r.item)});
  }
  return edges;
}

std::vector<Interaction> read_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file " + path.string());
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::skippable(line)) continue;
    auto fields = text::split(text::trim(line), '\t');
    if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected user<TAB>item");
    }
    out.push_back({std::string(fields[0]), std::string(fields[1])});
  }
  return out;
}

void write_interactions(const std::filesystem::path& path, std::span<const Interaction> interactions) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : interactions) out << r.user << '\t' << r.item << '\n';
}

}  // namespace gpatch
