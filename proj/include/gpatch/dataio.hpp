#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gpatch/common.hpp"
#include "gpatch/graph.hpp"

namespace gpatch {

enum class Partition : std::uint8_t { Embed = 0, Train = 1, Val = 2, Test = 3 };

const char* partition_name(Partition p);
Partition parse_partition(std::string_view name);

struct SplitConfig {
  double cold_item_frac = 0.2;
  std::array<double, 4> ratios = {0.65, 0.15, 0.10, 0.10};  // embed, train, val, test over warm-item interactions
  std::uint64_t seed = 0;

  void validate() const;
};

/// Cold-start split. Warm users/items are exactly those with at least one
/// embed-partition interaction; embed and train contain only warm-warm pairs.
struct SplitSpec {
  IdInterner interner;
  std::array<std::vector<Edge>, 4> parts;  // indexed by Partition, each sorted
  std::vector<std::uint8_t> cold_user;      // per dense user index
  std::vector<std::uint8_t> cold_item;      // per dense item index
  std::size_t sampled_cold_items = 0;       // before demotion
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  const std::vector<Edge>& part(Partition p) const { return parts[static_cast<std::size_t>(p)]; }
  std::vector<Edge>& part(Partition p) { return parts[static_cast<std::size_t>(p)]; }
  std::size_t n_users() const { return cold_user.size(); }
  std::size_t n_items() const { return cold_item.size(); }
  std::vector<std::uint8_t> warm_mask(Side s) const;
  std::vector<std::uint32_t> cold_items() const;
  std::vector<std::uint32_t> warm_items() const;

  /// Graph over the given partitions, sized to the full index space.
  BipartiteGraph graph(std::initializer_list<Partition> parts) const;

  friend bool operator==(const SplitSpec& a, const SplitSpec& b) {
    return a.interner == b.interner && a.parts == b.parts && a.cold_user == b.cold_user && a.cold_item == b.cold_item;
  }
};

SplitSpec make_split(std::span<const Interaction> interactions, const SplitConfig& cfg);

/// Split manifest: ID tables and cold lists as `#user`, `#item`, `#cold_item`,
/// `#cold_user` directive lines, then `user<TAB>item<TAB>{embed|train|val|test}`.
void write_split(const std::filesystem::path& path, const SplitSpec& split);
SplitSpec read_split(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t n_users = 2000;
  std::size_t n_items = 3000;
  std::size_t latent_dim = 8;
  std::size_t user_content_dim = 32;
  std::size_t item_content_dim = 32;
  double rho = 0.8;          // content-preference correlation
  double density = 0.01;
  double affinity_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  std::vector<Interaction> interactions;
  std::vector<std::string> user_ids;  // "u<k>"
  std::vector<std::string> item_ids;  // "i<k>"
  NodeMatrix user_latent;
  NodeMatrix item_latent;
  NodeMatrix user_content;            // rows by synthetic index
  NodeMatrix item_content;

  /// Content rows re-indexed to an interner built from these interactions.
  FeatureTable features_for(const IdInterner& interner) const;
};

/// Latent vectors per node; (u,i) interacts when its affinity is among the
/// top density * n_users * n_items. Content = rho * (map of latent) + (1 - rho) * noise.
SyntheticData make_synthetic(const SyntheticSpec& spec);

struct FeatureLoadOptions {
  std::span<const std::uint8_t> cold;  // per dense index; cold rows are mandatory
  bool warm_optional = false;          // missing warm rows become zero rows
  bool normalize = false;              // per-row L2 normalization
};

/// Feature files use the embedding vector-file formats.
NodeMatrix load_features(const std::filesystem::path& path, const IdInterner& interner, Side side,
                         const FeatureLoadOptions& opts, std::vector<std::string>* warnings = nullptr);

void normalize_rows(NodeMatrix& table);

}  // namespace gpatch
