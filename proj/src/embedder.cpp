#include "gpatch/embedder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include "binary_io.hpp"
#include "text_util.hpp"

namespace gpatch {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

BprStep bpr_step(std::span<const double> eu, std::span<const double> ei, std::span<const double> ej) {
  double margin = 0.0;
  for (std::size_t c = 0; c < eu.size(); ++c) margin += eu[c] * (ei[c] - ej[c]);
  return {margin, sigmoid(-margin)};
}

void bpr_update(std::span<double> eu, std::span<double> ei, std::span<double> ej, double lr, double l2) {
  const double g = bpr_step(eu, ei, ej).weight;
  for (std::size_t c = 0; c < eu.size(); ++c) {
    const double u = eu[c], i = ei[c], j = ej[c];
    eu[c] += lr * (g * (i - j) - l2 * u);
    ei[c] += lr * (g * u - l2 * i);
    ej[c] += lr * (-g * u - l2 * j);
  }
}

EmbeddingTable train_bpr_mf(const BipartiteGraph& graph, const BprConfig& cfg) {
  if (graph.edge_count() == 0) throw DataError("BPR-MF: embedding split has no interactions");
  if (cfg.dim == 0) throw UsageError("BPR-MF: dimension must be positive");
  EmbeddingTable emb;
  emb.users = NodeMatrix(graph.n_users(), cfg.dim);
  emb.items = NodeMatrix(graph.n_items(), cfg.dim);

  Rng init_rng = make_rng(cfg.seed, Stream::Embedding, 0);
  std::normal_distribution<double> normal(0.0, cfg.init_std);
  std::vector<std::uint32_t> warm_items;
  for (Side side : {Side::User, Side::Item}) {
    auto& table = emb.side(side);
    for (std::uint32_t n = 0; n < table.rows(); ++n) {
      if (graph.degree({side, n}) == 0) continue;
      table.set_present(n, true);
      for (double& v : table.row(n)) v = normal(init_rng);
      if (side == Side::Item) warm_items.push_back(n);
    }
  }

  std::vector<Edge> edges = graph.edges();
  Rng rng = make_rng(cfg.seed, Stream::Embedding, 1);
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(edges, rng);
    for (const Edge& e : edges) {
      auto adj = graph.neighbors({Side::User, e.user});
      if (adj.size() >= warm_items.size()) continue;  // no negative exists
      std::uint32_t j = 0;
      for (int attempt = 0; attempt < 100; ++attempt) {
        j = warm_items[uniform_index(rng, static_cast<std::uint32_t>(warm_items.size()))];
        if (!std::binary_search(adj.begin(), adj.end(), j)) break;
      }
      if (j == e.item) continue;
      bpr_update(emb.users.row(e.user), emb.items.row(e.item), emb.items.row(j), cfg.lr, cfg.l2);
    }
    for (const auto* table : {&emb.users, &emb.items}) {
      for (double v : table->data()) {
        if (!std::isfinite(v)) throw NumericError("BPR-MF diverged at epoch " + std::to_string(epoch));
      }
    }
  }
  return emb;
}

void write_vector_text(const std::filesystem::path& path, const NodeMatrix& table, std::span<const std::string> ids) {
  if (ids.size() != table.rows()) throw DataError("write_vector_text: id count does not match rows");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "d=" << table.dim() << '\n';
  std::string line;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    if (!table.has(r)) continue;
    line.assign(ids[r]);
    line.push_back('\t');
    auto row = table.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line.push_back(',');
      text::append_double(line, row[c]);
    }
    line.push_back('\n');
    out << line;
  }
}

void write_vector_binary(const std::filesystem::path& path, const NodeMatrix& table, std::span<const std::string> ids) {
  if (ids.size() != table.rows()) throw DataError("write_vector_binary: id count does not match rows");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  io::put_magic(out, "GPE1");
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  io::put<std::uint64_t>(out, table.present_count());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    if (table.has(r)) io::put_string(out, ids[r]);
  }
  for (std::size_t r = 0; r < table.rows(); ++r) {
    if (table.has(r)) io::put_doubles(out, table.row(r));
  }
}

namespace {

struct RawVectors {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<double> values;
};

RawVectors read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vector file " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  RawVectors raw;
  if (in && std::string_view(magic, 4) == "GPE1") {
    raw.dim = io::get<std::uint32_t>(in, path.string());
    auto count = io::get<std::uint64_t>(in, path.string());
    raw.ids.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) raw.ids.push_back(io::get_string(in, path.string()));
    raw.values.resize(count * raw.dim);
    io::get_doubles(in, raw.values, path.string());
    return raw;
  }
  in.clear();
  in.seekg(0);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::skippable(line)) continue;
    auto where = path.string() + ":" + std::to_string(lineno);
    auto body = text::trim(line);
    if (!have_header) {
      if (body.substr(0, 2) != "d=") throw DataError(where + ": expected header d=<dim>");
      raw.dim = text::parse_uint(body.substr(2), where);
      have_header = true;
      continue;
    }
    auto tab = body.find('\t');
    if (tab == std::string_view::npos) throw DataError(where + ": expected id<TAB>values");
    raw.ids.emplace_back(body.substr(0, tab));
    auto fields = text::split(body.substr(tab + 1), ',');
    if (fields.size() != raw.dim) {
      throw DataError(where + ": dimension mismatch, header says " + std::to_string(raw.dim) + ", row has " +
                      std::to_string(fields.size()));
    }
    for (auto f : fields) raw.values.push_back(text::parse_double(f, where));
  }
  if (!have_header) throw DataError(path.string() + ": empty vector file");
  return raw;
}

}  // namespace

VectorFileLoad read_vector_file(const std::filesystem::path& path, Side side, const IdInterner& interner) {
  RawVectors raw = read_raw(path);
  VectorFileLoad out;
  out.table = NodeMatrix(interner.size(side), raw.dim);
  for (std::size_t k = 0; k < raw.ids.size(); ++k) {
    auto index = interner.find(side, raw.ids[k]);
    if (!index) {
      out.unknown_ids.push_back(raw.ids[k]);
      continue;
    }
    if (out.table.has(*index)) throw DataError(path.string() + ": duplicate id '" + raw.ids[k] + "'");
    std::copy_n(raw.values.begin() + static_cast<std::ptrdiff_t>(k * raw.dim), raw.dim, out.table.row(*index).begin());
    out.table.set_present(*index, true);
  }
  return out;
}

NodeMatrix load_embeddings(const std::filesystem::path& path, Side side, const IdInterner& interner,
                           const EmbeddingLoadOptions& opts, std::vector<std::string>* warnings) {
  VectorFileLoad loaded = read_vector_file(path, side, interner);
  auto warn = [&](std::string msg) {
    if (warnings != nullptr) warnings->push_back(std::move(msg));
  };
  for (const auto& id : loaded.unknown_ids) warn(path.string() + ": unknown " + side_name(side) + " id '" + id + "'");
  for (std::uint32_t n = 0; n < opts.required.size() && n < loaded.table.rows(); ++n) {
    if (!opts.required[n] || loaded.table.has(n)) continue;
    std::string msg = path.string() + ": missing embedding for warm " + side_name(side) + " '" +
                      interner.id_of(side, n) + "'";
    if (opts.strict) throw DataError(msg);
    warn(std::move(msg));
  }
  return std::move(loaded.table);
}

}  // namespace gpatch
