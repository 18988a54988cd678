#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpatch/common.hpp"
#include "gpatch/walker.hpp"

namespace gpatch {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ModelShape {
  std::uint32_t depth = 3;               // K
  std::size_t dim = 200;                 // embedding size d
  std::size_t user_content_dim = 0;
  std::size_t item_content_dim = 0;
  std::vector<std::size_t> hidden = {200};
  std::size_t out_dim = 200;

  void validate() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) { return a.weight == b.weight && a.bias == b.bias; }
};

/// tanh at every hidden layer, linear output layer.
struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t out_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.rows()); }
  Vector forward(const Vector& in) const;

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

struct TensorRef {
  std::string name;
  std::span<double> values;
  bool regularized = false;  // weights and layer weights yes, biases no
};

/// Trainable state: per-side layer weights w_user, w_item (K+1 each) and the
/// two patching networks f_U, f_I.
struct ModelParams {
  ModelShape shape;
  Vector w_user;
  Vector w_item;
  Mlp patch_user;
  Mlp patch_item;

  /// Layer weights 1/(K+1); MLP weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
  static ModelParams init(const ModelShape& shape, std::uint64_t seed);
  static ModelParams zeros(const ModelShape& shape);

  const Vector& layer_weights(Side s) const { return s == Side::User ? w_user : w_item; }
  const Mlp& patch(Side s) const { return s == Side::User ? patch_user : patch_item; }

  std::vector<TensorRef> tensors();
  std::size_t parameter_count() const;
  bool all_finite() const;

  void save(std::ostream& out) const;
  static ModelParams load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static ModelParams load(const std::filesystem::path& path);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

enum class MaskDraw : std::uint8_t { Keep = 0, Drop = 1 };  // p = 0 / p = 1

inline MaskDraw draw_mask(Rng& rng, double tau) { return uniform01(rng) < tau ? MaskDraw::Drop : MaskDraw::Keep; }

enum class PatchMode { Train, Infer };

/// x_t = sum_k w^(k) x_t^(k) using the node side's weights.
Vector warm_repr(NodeRef node, const LayerReps& reps, const ModelParams& params);

/// x_u . x_i. Throws DataError when either node is cold.
double warm_score(std::uint32_t user, std::uint32_t item, const LayerReps& reps, const ModelParams& params);

/// Whole-vector masking: zero when p = 1, unchanged when p = 0.
Vector mask(const Vector& x, MaskDraw p);

/// f_side(masked_warm || content).
Vector patch_repr(Side side, const Vector& masked_warm, std::span<const double> content, const ModelParams& params);

/// Content row for a node; empty when the side carries no content.
std::span<const double> content_row(const FeatureTable& features, NodeRef node, const ModelShape& shape);

/// x_uc . x_ic. In Infer mode a side is masked (p = 1) exactly when it has no
/// layer representations; `reps` may be null, making both sides cold. In Train
/// mode both sides must be warm and the given draws are applied.
double cold_score(std::uint32_t user, std::uint32_t item, const LayerReps* reps, const FeatureTable& features,
                  const ModelParams& params, PatchMode mode, MaskDraw user_mask = MaskDraw::Keep,
                  MaskDraw item_mask = MaskDraw::Keep);

struct Example {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  double label = 0.0;
  MaskDraw user_mask = MaskDraw::Keep;
  MaskDraw item_mask = MaskDraw::Keep;
};

struct LossOptions {
  double l2 = 0.0;
  bool detach_patch_input = false;
};

struct BatchLoss {
  double data_loss = 0.0;   // mean over examples of (y - yw)^2 + (y - yc)^2
  double warm_loss = 0.0;
  double cold_loss = 0.0;
  double objective = 0.0;   // data_loss + l2 * sum of squared regularized parameters
};

/// Forward pass over a batch of warm pairs and, when `grad` is non-null, the
/// analytic gradient of `objective` with respect to every parameter tensor.
/// Layer representations, embeddings and features are constants.
BatchLoss loss_and_gradients(std::span<const Example> batch, const LayerReps& reps, const FeatureTable& features,
                             const ModelParams& params, const LossOptions& opts, ModelParams* grad);

}  // namespace gpatch
