#include "gpatch/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "gpatch/embedder.hpp"
#include "text_util.hpp"

namespace gpatch {

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::Embed: return "embed";
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
  }
  return "?";
}

Partition parse_partition(std::string_view name) {
  for (auto p : {Partition::Embed, Partition::Train, Partition::Val, Partition::Test}) {
    if (name == partition_name(p)) return p;
  }
  throw DataError("unknown partition '" + std::string(name) + "'");
}

void SplitConfig::validate() const {
  if (!(cold_item_frac >= 0.0 && cold_item_frac < 1.0)) throw UsageError("cold item fraction must be in [0, 1)");
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw UsageError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("split ratios must sum to 1");
}

std::vector<std::uint8_t> SplitSpec::warm_mask(Side s) const {
  const auto& cold = s == Side::User ? cold_user : cold_item;
  std::vector<std::uint8_t> out(cold.size());
  for (std::size_t k = 0; k < cold.size(); ++k) out[k] = cold[k] ? 0 : 1;
  return out;
}

std::vector<std::uint32_t> SplitSpec::cold_items() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < cold_item.size(); ++i) {
    if (cold_item[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::uint32_t> SplitSpec::warm_items() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < cold_item.size(); ++i) {
    if (!cold_item[i]) out.push_back(i);
  }
  return out;
}

BipartiteGraph SplitSpec::graph(std::initializer_list<Partition> ps) const {
  std::vector<Edge> edges;
  for (auto p : ps) edges.insert(edges.end(), part(p).begin(), part(p).end());
  return BipartiteGraph::from_edges(n_users(), n_items(), edges);
}

SplitSpec make_split(std::span<const Interaction> interactions, const SplitConfig& cfg) {
  cfg.validate();
  GraphBuild built = build_graph(interactions);
  SplitSpec split;
  split.interner = std::move(built.interner);
  split.seed = cfg.seed;
  const std::size_t n_users = built.graph.n_users();
  const std::size_t n_items = built.graph.n_items();
  split.cold_user.assign(n_users, 0);
  split.cold_item.assign(n_items, 0);
  Rng rng = make_rng(cfg.seed, Stream::Split);

  std::vector<std::uint32_t> items(n_items);
  for (std::uint32_t i = 0; i < n_items; ++i) items[i] = i;
  shuffle_in_place(items, rng);
  split.sampled_cold_items = static_cast<std::size_t>(std::llround(cfg.cold_item_frac * static_cast<double>(n_items)));
  for (std::size_t k = 0; k < split.sampled_cold_items; ++k) split.cold_item[items[k]] = 1;

  std::vector<Edge> warm_edges;
  std::map<std::uint32_t, std::vector<Edge>> cold_edges;
  for (const Edge& e : built.graph.edges()) {
    if (split.cold_item[e.item]) {
      cold_edges[e.item].push_back(e);
    } else {
      warm_edges.push_back(e);
    }
  }
  shuffle_in_place(warm_edges, rng);
  const double n = static_cast<double>(warm_edges.size());
  std::size_t bounds[5] = {0, 0, 0, 0, warm_edges.size()};
  double cum = 0.0;
  for (int p = 0; p < 3; ++p) {
    cum += cfg.ratios[static_cast<std::size_t>(p)];
    bounds[p + 1] = std::min(warm_edges.size(), static_cast<std::size_t>(std::llround(cum * n)));
  }
  for (int p = 0; p < 4; ++p) {
    split.parts[static_cast<std::size_t>(p)].assign(warm_edges.begin() + static_cast<std::ptrdiff_t>(bounds[p]),
                                                    warm_edges.begin() + static_cast<std::ptrdiff_t>(bounds[p + 1]));
  }
  for (auto& [item, edges] : cold_edges) {
    shuffle_in_place(edges, rng);
    std::size_t half = edges.size() / 2;
    auto& val = split.part(Partition::Val);
    auto& test = split.part(Partition::Test);
    val.insert(val.end(), edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(half));
    test.insert(test.end(), edges.begin() + static_cast<std::ptrdiff_t>(half), edges.end());
  }

  // Warm means "has an embed interaction": only those nodes get embeddings
  // and graph neighbors. Others become cold and leave the train partition.
  std::vector<std::uint8_t> user_embedded(n_users, 0), item_embedded(n_items, 0);
  for (const Edge& e : split.part(Partition::Embed)) {
    user_embedded[e.user] = 1;
    item_embedded[e.item] = 1;
  }
  std::vector<std::uint8_t> user_had_warm(n_users, 0);
  for (const Edge& e : warm_edges) user_had_warm[e.user] = 1;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    if (user_embedded[u]) continue;
    split.cold_user[u] = 1;
    if (user_had_warm[u]) {
      split.warnings.push_back("user '" + split.interner.id_of(Side::User, u) +
                               "' has no embedding interactions; demoted to cold user");
    }
  }
  for (std::uint32_t i = 0; i < n_items; ++i) {
    if (item_embedded[i] || split.cold_item[i]) continue;
    split.cold_item[i] = 1;
    split.warnings.push_back("item '" + split.interner.id_of(Side::Item, i) +
                             "' has no embedding interactions; demoted to cold item");
  }
  auto& train = split.part(Partition::Train);
  std::vector<Edge> kept;
  bool to_val = true;
  for (const Edge& e : train) {
    if (split.cold_user[e.user] || split.cold_item[e.item]) {
      split.part(to_val ? Partition::Val : Partition::Test).push_back(e);
      to_val = !to_val;
    } else {
      kept.push_back(e);
    }
  }
  train = std::move(kept);
  for (auto& part : split.parts) std::sort(part.begin(), part.end());
  return split;
}

void write_split(const std::filesystem::path& path, const SplitSpec& split) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# gpatch split manifest v1\n# seed=" << split.seed << '\n';
  for (const auto& id : split.interner.ids(Side::User)) out << "#user\t" << id << '\n';
  for (const auto& id : split.interner.ids(Side::Item)) out << "#item\t" << id << '\n';
  for (std::uint32_t i = 0; i < split.n_items(); ++i) {
    if (split.cold_item[i]) out << "#cold_item\t" << split.interner.id_of(Side::Item, i) << '\n';
  }
  for (std::uint32_t u = 0; u < split.n_users(); ++u) {
    if (split.cold_user[u]) out << "#cold_user\t" << split.interner.id_of(Side::User, u) << '\n';
  }
  for (auto p : {Partition::Embed, Partition::Train, Partition::Val, Partition::Test}) {
    for (const Edge& e : split.part(p)) {
      out << split.interner.id_of(Side::User, e.user) << '\t' << split.interner.id_of(Side::Item, e.item) << '\t'
          << partition_name(p) << '\n';
    }
  }
}

SplitSpec read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  SplitSpec split;
  std::vector<std::string> cold_items, cold_users;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto where = path.string() + ":" + std::to_string(lineno);
    auto body = text::trim(line);
    if (body.empty()) continue;
    auto fields = text::split(body, '\t');
    if (body.front() == '#') {
      if (fields.size() != 2) {
        if (body.rfind("# seed=", 0) == 0) split.seed = text::parse_uint(body.substr(7), where);
        continue;
      }
      if (fields[0] == "#user") {
        split.interner.intern(Side::User, fields[1]);
      } else if (fields[0] == "#item") {
        split.interner.intern(Side::Item, fields[1]);
      } else if (fields[0] == "#cold_item") {
        cold_items.emplace_back(fields[1]);
      } else if (fields[0] == "#cold_user") {
        cold_users.emplace_back(fields[1]);
      }
      continue;
    }
    if (fields.size() != 3) throw DataError(where + ": expected user<TAB>item<TAB>partition");
    Edge e{split.interner.intern(Side::User, fields[0]), split.interner.intern(Side::Item, fields[1])};
    split.part(parse_partition(fields[2])).push_back(e);
  }
  split.cold_user.assign(split.interner.size(Side::User), 0);
  split.cold_item.assign(split.interner.size(Side::Item), 0);
  for (const auto& id : cold_items) split.cold_item[split.interner.index_of(Side::Item, id)] = 1;
  for (const auto& id : cold_users) split.cold_user[split.interner.index_of(Side::User, id)] = 1;
  split.sampled_cold_items = cold_items.size();
  for (auto& part : split.parts) std::sort(part.begin(), part.end());
  for (auto p : {Partition::Embed, Partition::Train}) {
    for (const Edge& e : split.part(p)) {
      if (split.cold_user[e.user] || split.cold_item[e.item]) {
        throw DataError(path.string() + ": cold node in " + partition_name(p) + " partition");
      }
    }
  }
  return split;
}

void SyntheticSpec::validate() const {
  if (n_users == 0 || n_items == 0 || latent_dim == 0) throw UsageError("synthetic sizes must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("rho must be in [0, 1]");
  if (!(density > 0.0 && density < 1.0)) throw UsageError("density must be in (0, 1)");
  if (affinity_noise < 0.0) throw UsageError("affinity noise must be non-negative");
}

FeatureTable SyntheticData::features_for(const IdInterner& interner) const {
  FeatureTable f;
  auto remap = [&](Side side, const NodeMatrix& src, const std::vector<std::string>& ids) {
    NodeMatrix dst(interner.size(side), src.dim());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto index = interner.find(side, ids[k]);
      if (!index) continue;
      std::copy(src.row(k).begin(), src.row(k).end(), dst.row(*index).begin());
      dst.set_present(*index, true);
    }
    return dst;
  };
  f.users = remap(Side::User, user_content, user_ids);
  f.items = remap(Side::Item, item_content, item_ids);
  return f;
}

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const double total = static_cast<double>(spec.n_users) * static_cast<double>(spec.n_items);
  const auto wanted = static_cast<std::size_t>(std::llround(spec.density * total));
  if (wanted < 1 || wanted >= static_cast<std::size_t>(total)) {
    throw DataError("density " + std::to_string(spec.density) + " unreachable for " + std::to_string(spec.n_users) +
                    " x " + std::to_string(spec.n_items));
  }
  Rng rng = make_rng(spec.seed, Stream::Synthetic);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticData data;
  data.user_latent = NodeMatrix(spec.n_users, spec.latent_dim);
  data.item_latent = NodeMatrix(spec.n_items, spec.latent_dim);
  for (auto* m : {&data.user_latent, &data.item_latent}) {
    for (double& v : m->data()) v = normal(rng);
    for (std::size_t r = 0; r < m->rows(); ++r) m->set_present(r, true);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  std::vector<double> affinity(spec.n_users * spec.n_items);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    for (std::size_t i = 0; i < spec.n_items; ++i) {
      double a = dot(data.user_latent.row(u), data.item_latent.row(i)) * scale;
      if (spec.affinity_noise > 0.0) a += spec.affinity_noise * normal(rng);
      affinity[u * spec.n_items + i] = a;
    }
  }
  std::vector<double> sorted = affinity;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(wanted - 1), sorted.end(),
                   std::greater<>());
  const double threshold = sorted[wanted - 1];

  for (std::size_t u = 0; u < spec.n_users; ++u) data.user_ids.push_back("u" + std::to_string(u));
  for (std::size_t i = 0; i < spec.n_items; ++i) data.item_ids.push_back("i" + std::to_string(i));
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    for (std::size_t i = 0; i < spec.n_items; ++i) {
      if (affinity[u * spec.n_items + i] >= threshold) data.interactions.push_back({data.user_ids[u], data.item_ids[i]});
    }
  }

  auto make_content = [&](const NodeMatrix& latent, std::size_t cdim) {
    NodeMatrix map(cdim, spec.latent_dim);
    for (double& v : map.data()) v = normal(rng) * scale;
    NodeMatrix content(latent.rows(), cdim);
    for (std::size_t r = 0; r < latent.rows(); ++r) {
      auto row = content.row(r);
      for (std::size_t c = 0; c < cdim; ++c) {
        double noise = normal(rng);
        row[c] = spec.rho * dot(map.row(c), latent.row(r)) + (1.0 - spec.rho) * noise;
      }
      content.set_present(r, true);
    }
    return content;
  };
  data.user_content = make_content(data.user_latent, spec.user_content_dim);
  data.item_content = make_content(data.item_latent, spec.item_content_dim);
  return data;
}

void normalize_rows(NodeMatrix& table) {
  for (std::size_t r = 0; r < table.rows(); ++r) {
    auto row = table.row(r);
    double norm = std::sqrt(dot(row, row));
    if (norm > 0.0) {
      for (double& v : row) v /= norm;
    }
  }
}

NodeMatrix load_features(const std::filesystem::path& path, const IdInterner& interner, Side side,
                         const FeatureLoadOptions& opts, std::vector<std::string>* warnings) {
  VectorFileLoad loaded = read_vector_file(path, side, interner);
  NodeMatrix table = std::move(loaded.table);
  if (warnings != nullptr) {
    for (const auto& id : loaded.unknown_ids) {
      warnings->push_back(path.string() + ": unknown " + side_name(side) + " id '" + id + "'");
    }
  }
  for (std::uint32_t n = 0; n < table.rows(); ++n) {
    if (table.has(n)) continue;
    const bool cold = n < opts.cold.size() && opts.cold[n];
    if (cold || !opts.warm_optional) {
      throw DataError(path.string() + ": missing " + (cold ? "cold " : "") + side_name(side) + " features for '" +
                      interner.id_of(side, n) + "'");
    }
    table.set_present(n, true);  // zero row
  }
  if (opts.normalize) normalize_rows(table);
  return table;
}

}  // namespace gpatch
