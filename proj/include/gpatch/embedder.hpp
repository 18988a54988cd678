#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gpatch/common.hpp"
#include "gpatch/graph.hpp"

namespace gpatch {

struct BprConfig {
  std::size_t dim = 200;
  double lr = 0.05;
  double l2 = 1e-4;
  std::uint32_t epochs = 50;
  double init_std = 0.01;
  std::uint64_t seed = 0;
};

/// Scalar BPR objective pieces for one (u, i, j) triple.
struct BprStep {
  double margin = 0.0;  // e_u . (e_i - e_j)
  double weight = 0.0;  // sigmoid(-margin) = d(ln sigmoid(margin)) / d(margin)
};

BprStep bpr_step(std::span<const double> eu, std::span<const double> ei, std::span<const double> ej);

/// One SGD ascent step on ln sigmoid(e_u . (e_i - e_j)) - l2 * ||.||^2, in place.
void bpr_update(std::span<double> eu, std::span<double> ei, std::span<double> ej, double lr, double l2);

/// BPR-MF over the given graph. Rows exist for every node with degree > 0.
/// Updates are sequential; the result depends only on the graph and config.
EmbeddingTable train_bpr_mf(const BipartiteGraph& graph, const BprConfig& cfg);

// Vector files hold one side's rows keyed by external ID.
//   text:   "d=<dim>" header, then "ext_id<TAB>v1,...,vd" per line
//   binary: magic GPE1, u32 dim, u64 count, count x (u32 len, bytes), count x dim f64
void write_vector_text(const std::filesystem::path& path, const NodeMatrix& table, std::span<const std::string> ids);
void write_vector_binary(const std::filesystem::path& path, const NodeMatrix& table, std::span<const std::string> ids);

struct VectorFileLoad {
  NodeMatrix table;
  std::vector<std::string> unknown_ids;  // rows whose ID the interner does not know
};

/// Reads either format (detected by magic) and aligns rows to dense indices.
VectorFileLoad read_vector_file(const std::filesystem::path& path, Side side, const IdInterner& interner);

struct EmbeddingLoadOptions {
  bool strict = false;                     // missing required rows are errors instead of warnings
  std::span<const std::uint8_t> required;  // per dense index; empty = nothing required
};

/// Loads one side's embeddings. Unknown IDs and (non-strict) coverage gaps
/// are appended to `warnings`.
NodeMatrix load_embeddings(const std::filesystem::path& path, Side side, const IdInterner& interner,
                           const EmbeddingLoadOptions& opts, std::vector<std::string>* warnings = nullptr);

}  // namespace gpatch
