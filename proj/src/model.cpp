#include "gpatch/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace gpatch {

void ModelShape::validate() const {
  if (depth < 1) throw UsageError("model depth K must be >= 1");
  if (dim == 0) throw UsageError("embedding dimension must be positive");
  if (out_dim == 0) throw UsageError("patching output dimension must be positive");
  for (auto h : hidden) {
    if (h == 0) throw UsageError("hidden layer sizes must be positive");
  }
}

Vector Mlp::forward(const Vector& in) const {
  Vector a = in;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Vector z = layers[l].weight * a + layers[l].bias;
    a = (l + 1 < layers.size()) ? Vector(z.array().tanh()) : z;
  }
  return a;
}

namespace {

Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  Mlp mlp;
  std::size_t prev = in;
  for (auto h : hidden) {
    mlp.layers.push_back({Matrix::Zero(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(prev)),
                          Vector::Zero(static_cast<Eigen::Index>(h))});
    prev = h;
  }
  mlp.layers.push_back({Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(prev)),
                        Vector::Zero(static_cast<Eigen::Index>(out))});
  return mlp;
}

void init_uniform(Mlp& mlp, Rng& rng) {
  for (auto& layer : mlp.layers) {
    double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = (2.0 * uniform01(rng) - 1.0) * bound;
  }
}

}  // namespace

ModelParams ModelParams::zeros(const ModelShape& shape) {
  shape.validate();
  ModelParams p;
  p.shape = shape;
  p.w_user = Vector::Zero(shape.depth + 1);
  p.w_item = Vector::Zero(shape.depth + 1);
  p.patch_user = make_mlp(shape.dim + shape.user_content_dim, shape.hidden, shape.out_dim);
  p.patch_item = make_mlp(shape.dim + shape.item_content_dim, shape.hidden, shape.out_dim);
  return p;
}

ModelParams ModelParams::init(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p = zeros(shape);
  p.w_user.setConstant(1.0 / (shape.depth + 1));
  p.w_item.setConstant(1.0 / (shape.depth + 1));
  Rng rng = make_rng(seed, Stream::Init);
  init_uniform(p.patch_user, rng);
  init_uniform(p.patch_item, rng);
  return p;
}

std::vector<TensorRef> ModelParams::tensors() {
  std::vector<TensorRef> out;
  out.push_back({"w_user", {w_user.data(), static_cast<std::size_t>(w_user.size())}, true});
  out.push_back({"w_item", {w_item.data(), static_cast<std::size_t>(w_item.size())}, true});
  for (auto* mlp : {&patch_user, &patch_item}) {
    const char* tag = mlp == &patch_user ? "patch_user" : "patch_item";
    for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
      auto& layer = mlp->layers[l];
      std::string base = std::string(tag) + "." + std::to_string(l);
      out.push_back({base + ".weight", {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())}, true});
      out.push_back({base + ".bias", {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}, false});
    }
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : const_cast<ModelParams*>(this)->tensors()) n += t.values.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& t : const_cast<ModelParams*>(this)->tensors()) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// GPM1 layout: magic, u32 K, u64 d, u64 user_content_dim, u64 item_content_dim,
// u64 out_dim, u32 n_hidden, u64 hidden[n_hidden], then every tensor in
// tensors() order as f64 (matrices row-major, out x in).
void ModelParams::save(std::ostream& out) const {
  io::put_magic(out, "GPM1");
  io::put<std::uint32_t>(out, shape.depth);
  io::put<std::uint64_t>(out, shape.dim);
  io::put<std::uint64_t>(out, shape.user_content_dim);
  io::put<std::uint64_t>(out, shape.item_content_dim);
  io::put<std::uint64_t>(out, shape.out_dim);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.hidden.size()));
  for (auto h : shape.hidden) io::put<std::uint64_t>(out, h);
  for (const auto& t : const_cast<ModelParams*>(this)->tensors()) io::put_doubles(out, t.values);
}

ModelParams ModelParams::load(std::istream& in) {
  io::expect_magic(in, "GPM1", "checkpoint");
  ModelShape shape;
  shape.depth = io::get<std::uint32_t>(in, "checkpoint header");
  shape.dim = io::get<std::uint64_t>(in, "checkpoint header");
  shape.user_content_dim = io::get<std::uint64_t>(in, "checkpoint header");
  shape.item_content_dim = io::get<std::uint64_t>(in, "checkpoint header");
  shape.out_dim = io::get<std::uint64_t>(in, "checkpoint header");
  auto n_hidden = io::get<std::uint32_t>(in, "checkpoint header");
  if (n_hidden > 64) throw DataError("checkpoint: implausible hidden layer count");
  shape.hidden.resize(n_hidden);
  for (auto& h : shape.hidden) h = io::get<std::uint64_t>(in, "checkpoint header");
  ModelParams p = zeros(shape);
  for (auto& t : p.tensors()) io::get_doubles(in, t.values, "checkpoint tensor " + t.name);
  return p;
}

void ModelParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  save(out);
}

ModelParams ModelParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return load(in);
}

namespace {

using RowBlock = Eigen::Map<const Matrix>;

RowBlock layer_block(NodeRef node, const LayerReps& reps) {
  auto block = reps.block(node);
  return RowBlock(block.data(), static_cast<Eigen::Index>(reps.layers()), static_cast<Eigen::Index>(reps.dim()));
}

void check_reps(const LayerReps& reps, const ModelParams& params) {
  if (reps.depth() != params.shape.depth || reps.dim() != params.shape.dim) {
    throw DataError("layer representations do not match model shape (K=" + std::to_string(reps.depth()) +
                    ", d=" + std::to_string(reps.dim()) + ")");
  }
}

}  // namespace

Vector warm_repr(NodeRef node, const LayerReps& reps, const ModelParams& params) {
  check_reps(reps, params);
  return layer_block(node, reps).transpose() * params.layer_weights(node.side);
}

double warm_score(std::uint32_t user, std::uint32_t item, const LayerReps& reps, const ModelParams& params) {
  NodeRef u{Side::User, user}, i{Side::Item, item};
  if (!reps.has(u) || !reps.has(i)) throw DataError("route to patching branch: pair has a cold side");
  return warm_repr(u, reps, params).dot(warm_repr(i, reps, params));
}

Vector mask(const Vector& x, MaskDraw p) { return p == MaskDraw::Drop ? Vector::Zero(x.size()) : x; }

std::span<const double> content_row(const FeatureTable& features, NodeRef node, const ModelShape& shape) {
  std::size_t cdim = node.side == Side::User ? shape.user_content_dim : shape.item_content_dim;
  if (cdim == 0) return {};
  const auto& table = features.side(node.side);
  if (table.dim() != cdim) throw DataError(std::string(side_name(node.side)) + " feature dimension mismatch");
  if (!table.has(node.index)) throw DataError("missing content for " + to_string(node));
  return table.row(node.index);
}

Vector patch_repr(Side side, const Vector& masked_warm, std::span<const double> content, const ModelParams& params) {
  const Mlp& mlp = params.patch(side);
  const std::size_t d = static_cast<std::size_t>(masked_warm.size());
  if (d + content.size() != mlp.in_dim()) throw DataError("patch_repr: input dimension mismatch");
  Vector in(static_cast<Eigen::Index>(mlp.in_dim()));
  in.head(static_cast<Eigen::Index>(d)) = masked_warm;
  for (std::size_t c = 0; c < content.size(); ++c) in[static_cast<Eigen::Index>(d + c)] = content[c];
  return mlp.forward(in);
}

double cold_score(std::uint32_t user, std::uint32_t item, const LayerReps* reps, const FeatureTable& features,
                  const ModelParams& params, PatchMode mode, MaskDraw user_mask, MaskDraw item_mask) {
  auto side_repr = [&](NodeRef node, MaskDraw draw) -> Vector {
    const bool warm = reps != nullptr && reps->has(node);
    if (mode == PatchMode::Train && !warm) throw DataError("training pair with cold " + to_string(node));
    if (mode == PatchMode::Infer) draw = warm ? MaskDraw::Keep : MaskDraw::Drop;
    // A dropped side never reads its representation.
    Vector masked = draw == MaskDraw::Drop ? Vector::Zero(static_cast<Eigen::Index>(params.shape.dim))
                                           : mask(warm_repr(node, *reps, params), draw);
    return patch_repr(node.side, masked, content_row(features, node, params.shape), params);
  };
  return side_repr({Side::User, user}, user_mask).dot(side_repr({Side::Item, item}, item_mask));
}

namespace {

struct SideBatch {
  Matrix warm;                  // B x d, rows are x_t
  Matrix input;                 // B x (d + c)
  std::vector<Matrix> acts;     // post-activation of each layer, B x width
  std::vector<double> keep;     // 1 - p per example
};

// Row-per-example layout so that each example's vectors are contiguous.
SideBatch forward_side(Side side, std::span<const Example> batch, const LayerReps& reps, const FeatureTable& features,
                       const ModelParams& params) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(params.shape.dim);
  const Mlp& mlp = params.patch(side);
  const Vector& w = params.layer_weights(side);
  SideBatch sb;
  sb.warm.resize(B, d);
  sb.input.resize(B, static_cast<Eigen::Index>(mlp.in_dim()));
  sb.keep.resize(batch.size());
  for (Eigen::Index b = 0; b < B; ++b) {
    const Example& ex = batch[static_cast<std::size_t>(b)];
    NodeRef node = side == Side::User ? NodeRef{Side::User, ex.user} : NodeRef{Side::Item, ex.item};
    sb.warm.row(b) = (layer_block(node, reps).transpose() * w).transpose();
    MaskDraw draw = side == Side::User ? ex.user_mask : ex.item_mask;
    sb.keep[static_cast<std::size_t>(b)] = draw == MaskDraw::Drop ? 0.0 : 1.0;
    sb.input.row(b).head(d) = sb.warm.row(b) * sb.keep[static_cast<std::size_t>(b)];
    auto content = content_row(features, node, params.shape);
    for (std::size_t c = 0; c < content.size(); ++c) sb.input(b, d + static_cast<Eigen::Index>(c)) = content[c];
  }
  const Matrix* prev = &sb.input;
  sb.acts.reserve(mlp.layers.size());
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    Matrix z = (*prev) * mlp.layers[l].weight.transpose();
    z.rowwise() += mlp.layers[l].bias.transpose();
    if (l + 1 < mlp.layers.size()) z = z.array().tanh().matrix();
    sb.acts.push_back(std::move(z));
    prev = &sb.acts.back();
  }
  return sb;
}

// grad_out: B x out. Accumulates MLP gradients into `g` and returns the
// gradient with respect to the MLP input (B x in).
Matrix backward_side(const Mlp& mlp, const SideBatch& sb, Matrix grad_out, Mlp& g) {
  for (std::size_t l = mlp.layers.size(); l-- > 0;) {
    const Matrix& below = l == 0 ? sb.input : sb.acts[l - 1];
    g.layers[l].weight.noalias() += grad_out.transpose() * below;
    g.layers[l].bias += grad_out.colwise().sum().transpose();
    Matrix grad_below = grad_out * mlp.layers[l].weight;
    if (l > 0) grad_below.array() *= (1.0 - sb.acts[l - 1].array().square());
    grad_out = std::move(grad_below);
  }
  return grad_out;
}

}  // namespace

BatchLoss loss_and_gradients(std::span<const Example> batch, const LayerReps& reps, const FeatureTable& features,
                             const ModelParams& params, const LossOptions& opts, ModelParams* grad) {
  check_reps(reps, params);
  BatchLoss out;
  if (grad != nullptr) *grad = ModelParams::zeros(params.shape);
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B > 0) {
    for (const auto& ex : batch) {
      if (!reps.has({Side::User, ex.user}) || !reps.has({Side::Item, ex.item})) {
        throw DataError("training pair (user #" + std::to_string(ex.user) + ", item #" + std::to_string(ex.item) +
                        ") has a cold side");
      }
    }
    SideBatch su = forward_side(Side::User, batch, reps, features, params);
    SideBatch si = forward_side(Side::Item, batch, reps, features, params);
    const Matrix& ou = su.acts.back();
    const Matrix& oi = si.acts.back();
    Vector y_warm = (su.warm.array() * si.warm.array()).rowwise().sum();
    Vector y_cold = (ou.array() * oi.array()).rowwise().sum();
    Vector labels(B);
    for (Eigen::Index b = 0; b < B; ++b) labels[b] = batch[static_cast<std::size_t>(b)].label;
    Vector r_warm = y_warm - labels;
    Vector r_cold = y_cold - labels;
    const double inv_b = 1.0 / static_cast<double>(B);
    out.warm_loss = r_warm.squaredNorm() * inv_b;
    out.cold_loss = r_cold.squaredNorm() * inv_b;
    out.data_loss = out.warm_loss + out.cold_loss;
    if (!std::isfinite(out.data_loss)) {
      throw NumericError("non-finite loss in batch of " + std::to_string(B) +
                         " examples (warm " + std::to_string(out.warm_loss) + ", cold " +
                         std::to_string(out.cold_loss) + ")");
    }

    if (grad != nullptr) {
      Vector dw = 2.0 * inv_b * r_warm;  // dJ/d y_warm
      Vector dc = 2.0 * inv_b * r_cold;  // dJ/d y_cold
      Matrix gin_u = backward_side(params.patch_user, su, oi.array().colwise() * dc.array(), grad->patch_user);
      Matrix gin_i = backward_side(params.patch_item, si, ou.array().colwise() * dc.array(), grad->patch_item);

      const auto d = static_cast<Eigen::Index>(params.shape.dim);
      Matrix gx_u = si.warm.array().colwise() * dw.array();
      Matrix gx_i = su.warm.array().colwise() * dw.array();
      if (!opts.detach_patch_input) {
        for (Eigen::Index b = 0; b < B; ++b) {
          gx_u.row(b) += su.keep[static_cast<std::size_t>(b)] * gin_u.row(b).head(d);
          gx_i.row(b) += si.keep[static_cast<std::size_t>(b)] * gin_i.row(b).head(d);
        }
      }
      for (Eigen::Index b = 0; b < B; ++b) {
        const Example& ex = batch[static_cast<std::size_t>(b)];
        grad->w_user += layer_block({Side::User, ex.user}, reps) * gx_u.row(b).transpose();
        grad->w_item += layer_block({Side::Item, ex.item}, reps) * gx_i.row(b).transpose();
      }
    }
  }

  double penalty = 0.0;
  auto param_tensors = const_cast<ModelParams&>(params).tensors();
  std::vector<TensorRef> grad_tensors;
  if (grad != nullptr) grad_tensors = grad->tensors();
  for (std::size_t t = 0; t < param_tensors.size(); ++t) {
    if (!param_tensors[t].regularized || opts.l2 == 0.0) continue;
    auto values = param_tensors[t].values;
    for (std::size_t k = 0; k < values.size(); ++k) {
      penalty += values[k] * values[k];
      if (grad != nullptr) grad_tensors[t].values[k] += 2.0 * opts.l2 * values[k];
    }
  }
  out.objective = out.data_loss + opts.l2 * penalty;
  if (grad != nullptr && !grad->all_finite()) throw NumericError("non-finite gradient in batch of " + std::to_string(B));
  return out;
}

}  // namespace gpatch
