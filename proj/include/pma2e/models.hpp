#pragma once

// Learnable components: the PointNet-style global encoder, patch token
// embedding, positional embeddings, Transformer encoder and patch decoder,
// and the fully-connected / folding point heads.

#include <cmath>
#include <string>
#include <vector>

#include "corruption.hpp"
#include "geometry.hpp"
#include "nn.hpp"

namespace pma2e {

enum class EncoderKind { PointNet, Transformer };
enum class HeadKind { Fc, Fold };
enum class Objective { Decomposed, Whole, LocalOnly, GlobalOnly };

struct PointNetEncoderConfig {
  std::vector<std::size_t> widths{3, 64, 128, 64};

  std::size_t dim() const { return widths.back(); }
  void validate() const {
    require(widths.size() >= 2 && widths.front() == 3, ErrorKind::Config, "pointnet widths must start at 3");
    for (auto w : widths) require(w >= 1, ErrorKind::Config, "pointnet widths must be positive");
  }
};

struct TransformerConfig {
  std::size_t dim = 64;
  std::size_t encoder_depth = 4;
  std::size_t decoder_depth = 2;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  std::size_t patches = 16;     // n
  std::size_t patch_size = 16;  // k
  std::vector<std::size_t> embed_hidden{64, 128};

  void validate() const {
    require(dim >= 1 && heads >= 1 && dim % heads == 0, ErrorKind::Config, "model dim must be divisible by heads");
    require(decoder_depth < encoder_depth, ErrorKind::Config, "decoder depth must be smaller than encoder depth");
    require(patches >= 2 && patch_size >= 1 && ff_mult >= 1, ErrorKind::Config, "invalid patch configuration");
  }
};

struct ModelConfig {
  EncoderKind encoder = EncoderKind::Transformer;
  Objective objective = Objective::Decomposed;
  std::size_t points = 1024;
  TransformerConfig transformer;
  PointNetEncoderConfig pointnet;
  HeadKind local_head = HeadKind::Fold;
  HeadKind global_head = HeadKind::Fc;
  HeadKind cloud_head = HeadKind::Fc;  // non-Transformer reconstruction head
  std::size_t fc_hidden = 256;
  std::size_t fold_hidden = 64;

  void validate() const {
    require(points >= 1, ErrorKind::Config, "points must be positive");
    require(fc_hidden >= 1 && fold_hidden >= 1, ErrorKind::Config, "head widths must be positive");
    if (encoder == EncoderKind::Transformer) {
      transformer.validate();
      require(transformer.patches <= points && transformer.patch_size <= points, ErrorKind::Config,
              "patches and patch_size must not exceed points");
    } else {
      pointnet.validate();
    }
  }
};

/// k seeds on the smallest near-square grid covering k, spanning
/// [-0.5, 0.5]^2, row-major, truncated to k. Returned as [k, 2].
inline std::vector<double> folding_grid(std::size_t k) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
  const std::size_t rows = (k + cols - 1) / cols;
  auto coord = [](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : -0.5 + static_cast<double>(i) / static_cast<double>(n - 1);
  };
  std::vector<double> g;
  g.reserve(2 * k);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols && g.size() < 2 * k; ++c) {
      g.push_back(coord(c, cols));
      g.push_back(coord(r, rows));
    }
  return g;
}

/// Maps feature rows [r, d] to point sets [r, count, 3]; a single feature
/// [d] maps to [count, 3].
template <typename T>
class PointHead {
 public:
  PointHead() = default;
  PointHead(ParameterSet<T>& ps, const std::string& name, HeadKind kind, std::size_t dim, std::size_t count,
            std::size_t fc_hidden, std::size_t fold_hidden, Rng& rng)
      : kind_(kind), dim_(dim), count_(count) {
    if (kind == HeadKind::Fc) {
      mlp_ = Mlp<T>(ps, name + ".fc", {dim, fc_hidden, fc_hidden, 3 * count}, Activation::Relu, rng);
    } else {
      const auto g = folding_grid(count);
      grid_.assign(g.begin(), g.end());
      mlp_ = Mlp<T>(ps, name + ".fold", {dim + 2, fold_hidden, fold_hidden, 3}, Activation::Relu, rng);
    }
  }

  Tensor<T> operator()(const Tensor<T>& features) const {
    if (features.rank() == 1) {
      auto out = (*this)(reshape(features, {1, features.dim(0)}));
      return reshape(out, {count_, 3});
    }
    require(features.rank() == 2 && features.dim(1) == dim_, ErrorKind::Shape,
            "point head expects [r," + std::to_string(dim_) + "], got " + shape_str(features.shape()));
    const std::size_t r = features.dim(0);
    if (kind_ == HeadKind::Fc) return reshape(mlp_(features), {r, count_, 3});
    std::vector<std::size_t> rep(r * count_);
    std::vector<T> seeds(r * count_ * 2);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count_; ++j) {
        rep[i * count_ + j] = i;
        seeds[(i * count_ + j) * 2] = grid_[2 * j];
        seeds[(i * count_ + j) * 2 + 1] = grid_[2 * j + 1];
      }
    const auto grid = Tensor<T>::from({r * count_, 2}, std::move(seeds));
    const auto joined = concat<T>({grid, gather_rows(features, std::move(rep))}, 1);
    return reshape(mlp_(joined), {r, count_, 3});
  }

  HeadKind kind() const { return kind_; }
  std::size_t count() const { return count_; }

 private:
  HeadKind kind_ = HeadKind::Fc;
  std::size_t dim_ = 0, count_ = 0;
  std::vector<T> grid_;
  Mlp<T> mlp_;
};

/// Shared per-point MLP followed by max pooling over points.
template <typename T>
class PointNetEncoder {
 public:
  PointNetEncoder() = default;
  PointNetEncoder(ParameterSet<T>& ps, const std::string& name, const PointNetEncoderConfig& cfg, Rng& rng)
      : mlp_(ps, name, cfg.widths, Activation::Relu, rng) {}

  /// [w, 3] -> [d]
  Tensor<T> operator()(const Tensor<T>& cloud) const {
    require(cloud.rank() == 2 && cloud.dim(1) == 3 && cloud.dim(0) >= 1, ErrorKind::Shape,
            "pointnet encoder expects [w,3], got " + shape_str(cloud.shape()));
    return max_pool(mlp_(cloud), 0);
  }

 private:
  Mlp<T> mlp_;
};

/// Patch tokenizer: shared MLP over the coordinates of each normalized
/// patch, max-pooled across the patch's k points.
template <typename T>
class TokenEmbedding {
 public:
  TokenEmbedding() = default;
  TokenEmbedding(ParameterSet<T>& ps, const std::string& name, const TransformerConfig& cfg, Rng& rng) {
    std::vector<std::size_t> widths{3};
    widths.insert(widths.end(), cfg.embed_hidden.begin(), cfg.embed_hidden.end());
    widths.push_back(cfg.dim);
    mlp_ = Mlp<T>(ps, name, widths, Activation::Relu, rng);
  }

  /// [r, k, 3] -> [r, d]
  Tensor<T> operator()(const Tensor<T>& patches) const {
    require(patches.rank() == 3 && patches.dim(2) == 3, ErrorKind::Shape,
            "token embedding expects [r,k,3], got " + shape_str(patches.shape()));
    return max_pool(mlp_(patches), 1);
  }

 private:
  Mlp<T> mlp_;
};

/// Learnable MLP positional embedding 3 -> d, final layer zero-initialized.
template <typename T>
class PositionalEmbedding {
 public:
  PositionalEmbedding() = default;
  PositionalEmbedding(ParameterSet<T>& ps, const std::string& name, std::size_t dim, Rng& rng)
      : mlp_(ps, name, {3, 2 * dim, dim}, Activation::Gelu, rng, /*zero_init_last=*/true) {}

  Tensor<T> operator()(const Tensor<T>& centers) const { return mlp_(centers); }

 private:
  Mlp<T> mlp_;
};

/// Transformer decoder over the full patch sequence: encoded tokens at
/// visible positions, copies of one learnable mask token elsewhere.
template <typename T>
class PatchDecoder {
 public:
  PatchDecoder() = default;
  PatchDecoder(ParameterSet<T>& ps, const std::string& name, const TransformerConfig& cfg, Rng& rng) : dim_(cfg.dim) {
    std::normal_distribution<double> g(0.0, 0.02);
    std::vector<T> init(cfg.dim);
    for (auto& v : init) v = static_cast<T>(g(rng));
    mask_token_ = ps.create(name + ".mask_token", {cfg.dim}, std::move(init));
    blocks_ = TransformerStack<T>(ps, name + ".blocks", cfg.decoder_depth, cfg.dim, cfg.heads, cfg.ff_mult, rng);
  }

  /// The n x d decoder input before the first block.
  Tensor<T> assemble(const Tensor<T>& encoded, const MaskPlan& plan) const {
    const std::size_t n = plan.count();
    require(encoded.rank() == 2 && encoded.dim(0) == plan.visible.size() && encoded.dim(1) == dim_, ErrorKind::Shape,
            "patch decoder: encoded tokens " + shape_str(encoded.shape()) + " inconsistent with mask plan (" +
                std::to_string(plan.visible.size()) + " visible)");
    auto seq = scatter_rows(encoded, plan.visible, n);
    if (!plan.masked.empty()) {
      const auto copies = gather_rows(reshape(mask_token_, {1, dim_}), std::vector<std::size_t>(plan.masked.size(), 0));
      seq = add(seq, scatter_rows(copies, plan.masked, n));
    }
    return seq;
  }

  /// Decoded tokens at `targets` (ascending sequence positions).
  Tensor<T> operator()(const Tensor<T>& encoded, const Tensor<T>& pe_all, const MaskPlan& plan,
                       const std::vector<std::size_t>& targets) const {
    require(pe_all.rank() == 2 && pe_all.dim(0) == plan.count(), ErrorKind::Shape,
            "patch decoder: positional embedding rows must equal patch count");
    return gather_rows(blocks_(assemble(encoded, plan), pe_all), targets);
  }

  const Tensor<T>& mask_token() const { return mask_token_; }

 private:
  std::size_t dim_ = 0;
  Tensor<T> mask_token_;
  TransformerStack<T> blocks_;
};

/// Global-feature autoencoder: PointNet encoder plus an fc or folding head
/// reconstructing `points` points.
template <typename T>
class PointNetAutoencoder {
 public:
  PointNetAutoencoder(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    encoder_ = PointNetEncoder<T>(params_, "encoder", cfg.pointnet, rng);
    head_ = PointHead<T>(params_, "decoder", cfg.cloud_head, cfg.pointnet.dim(), cfg.points, cfg.fc_hidden,
                         cfg.fold_hidden, rng);
  }

  Tensor<T> encode(const Tensor<T>& cloud) const { return encoder_(cloud); }
  Tensor<T> decode(const Tensor<T>& feature) const { return head_(feature); }

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
  PointNetEncoder<T> encoder_;
  PointHead<T> head_;
};

/// Patch-token Transformer autoencoder with a local patch head and a
/// global center head (or a whole-cloud head for the direct objective).
template <typename T>
class TransformerAutoencoder {
 public:
  TransformerAutoencoder(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    const auto& tc = cfg.transformer;
    Rng rng(seed);
    embed_ = TokenEmbedding<T>(params_, "embed", tc, rng);
    pe_encoder_ = PositionalEmbedding<T>(params_, "pe_encoder", tc.dim, rng);
    encoder_ = TransformerStack<T>(params_, "encoder", tc.encoder_depth, tc.dim, tc.heads, tc.ff_mult, rng);
    if (cfg.objective == Objective::Whole) {
      cloud_head_ = PointHead<T>(params_, "whole_head", HeadKind::Fc, tc.dim, cfg.points, cfg.fc_hidden,
                                 cfg.fold_hidden, rng);
    } else {
      pe_decoder_ = PositionalEmbedding<T>(params_, "pe_decoder", tc.dim, rng);
      decoder_ = PatchDecoder<T>(params_, "decoder", tc, rng);
      local_head_ = PointHead<T>(params_, "local_head", cfg.local_head, tc.dim, tc.patch_size, cfg.fc_hidden,
                                 cfg.fold_hidden, rng);
      center_head_ = PointHead<T>(params_, "center_head", cfg.global_head, tc.dim, tc.patches, cfg.fc_hidden,
                                  cfg.fold_hidden, rng);
    }
  }

  /// Normalized patches [r, k, 3] -> tokens [r, d].
  Tensor<T> embed(const Tensor<T>& patches) const { return embed_(patches); }
  Tensor<T> pe_encoder(const Tensor<T>& centers) const { return pe_encoder_(centers); }
  Tensor<T> pe_decoder(const Tensor<T>& centers) const { return pe_decoder_(centers); }

  /// Visible tokens plus their centers -> encoded tokens [r, d].
  Tensor<T> encode(const Tensor<T>& tokens, const Tensor<T>& centers) const {
    return encoder_(tokens, pe_encoder_(centers));
  }

  /// Decoded tokens at `targets` given encoded visible tokens and all n
  /// reference centers.
  Tensor<T> decode(const Tensor<T>& encoded, const Tensor<T>& all_centers, const MaskPlan& plan,
                   const std::vector<std::size_t>& targets) const {
    require(has_patch_decoder(), ErrorKind::InvalidArgument, "model was built without a patch decoder");
    return decoder_(encoded, pe_decoder_(all_centers), plan, targets);
  }

  Tensor<T> predict_patches(const Tensor<T>& decoded) const { return local_head_(decoded); }

  /// Pools encoded tokens to one vector and decodes n patch centers.
  Tensor<T> predict_centers(const Tensor<T>& encoded) const {
    require(has_patch_decoder(), ErrorKind::InvalidArgument, "model was built without a center head");
    return center_head_(max_pool(encoded, 0));
  }

  /// Pools encoded tokens and decodes the whole cloud (direct objective).
  Tensor<T> predict_cloud(const Tensor<T>& encoded) const {
    require(!has_patch_decoder(), ErrorKind::InvalidArgument, "model was built without a whole-cloud head");
    return cloud_head_(max_pool(encoded, 0));
  }

  bool has_patch_decoder() const { return cfg_.objective != Objective::Whole; }
  const PatchDecoder<T>& patch_decoder() const { return decoder_; }

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
  TokenEmbedding<T> embed_;
  PositionalEmbedding<T> pe_encoder_, pe_decoder_;
  TransformerStack<T> encoder_;
  PatchDecoder<T> decoder_;
  PointHead<T> local_head_, center_head_, cloud_head_;
};

/// Row-major [rows, 3] tensor from points.
template <typename T>
Tensor<T> points_tensor(std::span<const Vec3> pts, Shape shape = {}) {
  std::vector<T> v;
  v.reserve(pts.size() * 3);
  for (const auto& p : pts)
    for (double c : p) v.push_back(static_cast<T>(c));
  if (shape.empty()) shape = {pts.size(), 3};
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
std::vector<Vec3> tensor_points(const Tensor<T>& t) {
  require(t.numel() % 3 == 0, ErrorKind::Shape, "tensor does not hold 3D points: " + shape_str(t.shape()));
  std::vector<Vec3> out(t.numel() / 3);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {static_cast<double>(t.values()[3 * i]), static_cast<double>(t.values()[3 * i + 1]),
              static_cast<double>(t.values()[3 * i + 2])};
  return out;
}

/// Rows of a patch set as [rows.size(), k, 3], requiring normalized
/// patches.
template <typename T>
Tensor<T> patch_tensor(const PatchSet& ps, std::span<const std::size_t> rows) {
  require(ps.normalized, ErrorKind::InvalidArgument, "token embedding requires normalized patches");
  std::vector<Vec3> pts;
  pts.reserve(rows.size() * ps.k);
  for (auto r : rows) {
    require(r < ps.n, ErrorKind::InvalidArgument, "patch row out of range");
    for (std::size_t j = 0; j < ps.k; ++j) pts.push_back(ps.point(r, j));
  }
  return points_tensor<T>(pts, {rows.size(), ps.k, 3});
}

template <typename T>
Tensor<T> center_tensor(const PatchSet& ps, std::span<const std::size_t> rows) {
  std::vector<Vec3> pts;
  for (auto r : rows) pts.push_back(ps.centers.at(r));
  return points_tensor<T>(pts);
}

}  // namespace pma2e
