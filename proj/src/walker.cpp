#include "gpatch/walker.hpp"

#include <algorithm>
#include <fstream>

#include "binary_io.hpp"
#include "parallel.hpp"

namespace gpatch {

void WalkConfig::validate() const {
  if (depth < 1) throw UsageError("walk depth K must be >= 1");
  if (walks_per_node < 1) throw UsageError("walks per node S must be >= 1");
}

std::uint64_t walk_seed(std::uint64_t master, NodeRef root, std::uint32_t ordinal) {
  return hash_seed(master, {static_cast<std::uint64_t>(Stream::Walks), static_cast<std::uint64_t>(root.side),
                            root.index, ordinal});
}

WalkSet sample_walks(const BipartiteGraph& graph, NodeRef root, const WalkConfig& cfg) {
  cfg.validate();
  if (graph.neighbors(root).empty()) throw DataError("cold node has no walks: " + to_string(root));
  WalkSet ws;
  ws.root = root;
  ws.depth = cfg.depth;
  ws.walks = cfg.walks_per_node;
  ws.nodes.resize(static_cast<std::size_t>(ws.depth) * ws.walks);
  for (std::uint32_t s = 0; s < ws.walks; ++s) {
    Rng rng(walk_seed(cfg.seed, root, s));
    NodeRef cur = root;
    for (std::uint32_t k = 1; k <= ws.depth; ++k) {
      // The predecessor is always a neighbor, so interior nodes never dead-end.
      auto adj = graph.neighbors(cur);
      cur = {opposite(cur.side), adj[uniform_index(rng, static_cast<std::uint32_t>(adj.size()))]};
      ws.nodes[s * ws.depth + k - 1] = cur.index;
    }
  }
  return ws;
}

std::vector<double> pool_layers(const WalkSet& ws, const EmbeddingTable& emb) {
  const std::size_t d = emb.users.dim();
  if (emb.items.dim() != d) throw DataError("pool_layers: user and item embedding dimensions differ");
  std::vector<double> out((ws.depth + 1) * d, 0.0);
  auto fetch = [&](NodeRef node) {
    const auto& table = emb.side(node.side);
    if (!table.has(node.index)) throw DataError("pool_layers: no embedding for " + to_string(node));
    return table.row(node.index);
  };
  auto root_row = fetch(ws.root);
  std::copy(root_row.begin(), root_row.end(), out.begin());
  // Mean as a visit-frequency-weighted sum in ascending node order, so a
  // node visited by every walk contributes its row exactly.
  std::vector<std::uint32_t> visits(ws.walks);
  for (std::uint32_t k = 1; k <= ws.depth; ++k) {
    Side side = WalkSet::side_at(ws.root.side, k);
    double* acc = out.data() + k * d;
    for (std::uint32_t s = 0; s < ws.walks; ++s) visits[s] = ws.at(s, k);
    std::sort(visits.begin(), visits.end());
    for (std::size_t s = 0; s < visits.size();) {
      std::size_t e = s;
      while (e < visits.size() && visits[e] == visits[s]) ++e;
      const double weight = static_cast<double>(e - s) / static_cast<double>(ws.walks);
      auto row = fetch({side, visits[s]});
      for (std::size_t c = 0; c < d; ++c) acc[c] += weight * row[c];
      s = e;
    }
  }
  return out;
}

LayerReps::LayerReps(std::uint32_t depth, std::size_t dim, std::size_t n_users, std::size_t n_items)
    : depth_(depth), dim_(dim) {
  tables_.users = NodeMatrix(n_users, (depth + 1) * dim);
  tables_.items = NodeMatrix(n_items, (depth + 1) * dim);
}

std::span<const double> LayerReps::block(NodeRef node) const {
  if (!has(node)) throw DataError("no layer representations for " + to_string(node));
  return tables_.side(node.side).row(node.index);
}

void LayerReps::set_block(NodeRef node, std::span<const double> values) {
  auto& table = tables_.side(node.side);
  if (node.index >= table.rows()) throw DataError("set_block: " + to_string(node) + " out of range");
  if (values.size() != table.dim()) throw DataError("set_block: block size mismatch");
  std::copy(values.begin(), values.end(), table.row(node.index).begin());
  table.set_present(node.index, true);
}

// GPL1 layout: magic, u32 K, u32 d, u64 n_users, u64 n_items,
// u8 present[n_users], u8 present[n_items], then for every present node
// (users first, ascending index) (K+1)*d f64 values, layer-major.
void LayerReps::save(std::ostream& out) const {
  io::put_magic(out, "GPL1");
  io::put<std::uint32_t>(out, depth_);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  io::put<std::uint64_t>(out, tables_.users.rows());
  io::put<std::uint64_t>(out, tables_.items.rows());
  for (const auto* t : {&tables_.users, &tables_.items}) {
    for (auto p : t->presence()) io::put<std::uint8_t>(out, p);
  }
  for (const auto* t : {&tables_.users, &tables_.items}) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      if (t->has(r)) io::put_doubles(out, t->row(r));
    }
  }
}

LayerReps LayerReps::load(std::istream& in) {
  io::expect_magic(in, "GPL1", "layer cache");
  auto depth = io::get<std::uint32_t>(in, "layer cache header");
  auto dim = io::get<std::uint32_t>(in, "layer cache header");
  auto nu = io::get<std::uint64_t>(in, "layer cache header");
  auto ni = io::get<std::uint64_t>(in, "layer cache header");
  LayerReps reps(depth, dim, nu, ni);
  for (auto* t : {&reps.tables_.users, &reps.tables_.items}) {
    for (std::size_t r = 0; r < t->rows(); ++r) t->set_present(r, io::get<std::uint8_t>(in, "layer cache presence") != 0);
  }
  for (auto* t : {&reps.tables_.users, &reps.tables_.items}) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      if (t->has(r)) io::get_doubles(in, t->row(r), "layer cache block");
    }
  }
  return reps;
}

void LayerReps::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  save(out);
}

LayerReps LayerReps::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return load(in);
}

LayerReps precompute_all(const BipartiteGraph& graph, const EmbeddingTable& emb, const WalkConfig& cfg,
                         unsigned threads) {
  cfg.validate();
  const std::size_t d = emb.users.dim();
  if (emb.items.dim() != d) throw DataError("precompute: user and item embedding dimensions differ");
  std::vector<NodeRef> warm;
  for (Side side : {Side::User, Side::Item}) {
    for (std::uint32_t n = 0; n < graph.n_nodes(side); ++n) {
      NodeRef node{side, n};
      if (graph.degree(node) == 0) continue;
      if (!emb.side(side).has(n)) throw DataError("precompute: missing embedding for warm " + to_string(node));
      warm.push_back(node);
    }
  }
  LayerReps reps(cfg.depth, d, graph.n_users(), graph.n_items());
  // Each worker writes disjoint rows, so no synchronization is needed.
  detail::parallel_for(warm.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      reps.set_block(warm[k], pool_layers(sample_walks(graph, warm[k], cfg), emb));
    }
  });
  return reps;
}

}  // namespace gpatch
