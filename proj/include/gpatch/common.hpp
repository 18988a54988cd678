#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpatch {

enum class Side : std::uint8_t { User = 0, Item = 1 };

inline Side opposite(Side s) { return s == Side::User ? Side::Item : Side::User; }
inline const char* side_name(Side s) { return s == Side::User ? "user" : "item"; }

struct NodeRef {
  Side side = Side::User;
  std::uint32_t index = 0;

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

std::string to_string(NodeRef node);

// Error categories map onto CLI exit codes: usage 1, data 2, numeric 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 2; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 1; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

/// Dense row-per-node table with a presence flag per row. Absent rows hold
/// zeros and stand for nodes that have no vector (cold nodes for embeddings).
class NodeMatrix {
 public:
  NodeMatrix() = default;
  NodeMatrix(std::size_t rows, std::size_t dim)
      : dim_(dim), data_(rows * dim, 0.0), present_(rows, 0) {}

  std::size_t rows() const { return present_.size(); }
  std::size_t dim() const { return dim_; }

  bool has(std::size_t r) const { return r < present_.size() && present_[r] != 0; }
  void set_present(std::size_t r, bool on) { present_.at(r) = on ? 1 : 0; }
  std::size_t present_count() const;

  std::span<double> row(std::size_t r) { return {data_.data() + r * dim_, dim_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  const std::vector<std::uint8_t>& presence() const { return present_; }

  friend bool operator==(const NodeMatrix&, const NodeMatrix&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
  std::vector<std::uint8_t> present_;
};

struct SidedTables {
  NodeMatrix users;
  NodeMatrix items;

  NodeMatrix& side(Side s) { return s == Side::User ? users : items; }
  const NodeMatrix& side(Side s) const { return s == Side::User ? users : items; }

  friend bool operator==(const SidedTables&, const SidedTables&) = default;
};

/// Warm user/item embeddings (E_U, E_I). Cold nodes have no row.
struct EmbeddingTable : SidedTables {};

/// Content vectors (c_u, c_i) covering warm and cold nodes.
struct FeatureTable : SidedTables {};

// ---------------------------------------------------------------------------
// Randomness. Engines are std::mt19937_64; the seed hash and the index/real
// mappings below are fixed so that sampled values do not depend on the
// standard library's distribution implementations.

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds each part into the running hash: h = mix64(h ^ part).
inline std::uint64_t hash_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(seed);
  for (auto p : parts) h = mix64(h ^ p);
  return h;
}

/// Uniform integer in [0, n) by multiply-shift.
inline std::uint32_t uniform_index(Rng& rng, std::uint32_t n) {
  return static_cast<std::uint32_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t k = v.size(); k > 1; --k) {
    auto j = uniform_index(rng, static_cast<std::uint32_t>(k));
    std::swap(v[k - 1], v[j]);
  }
}

// Purpose tags keep RNG streams independent of each other.
enum class Stream : std::uint64_t {
  Walks = 1,
  Negatives = 2,
  Masks = 3,
  Shuffle = 4,
  Init = 5,
  Split = 6,
  Synthetic = 7,
  Embedding = 8,
  Validation = 9,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t salt = 0) {
  return Rng(hash_seed(seed, {static_cast<std::uint64_t>(stream), salt}));
}

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace gpatch
