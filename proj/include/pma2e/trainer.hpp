#pragma once

// Pretraining: per-sample corruption and reconstruction, the AdamW loop
// under a cosine schedule, metrics logging, checkpoints and resume.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "corruption.hpp"
#include "losses.hpp"
#include "models.hpp"
#include "optim.hpp"

namespace pma2e {

// Stream tags mixed into derive_seed.
inline constexpr std::uint64_t kInitStream = 0x696e6974;     // model initialization
inline constexpr std::uint64_t kShuffleStream = 0x73687566;  // epoch ordering

/// Either autoencoder, chosen by the encoder kind.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.encoder == EncoderKind::PointNet)
      pointnet_ = std::make_unique<PointNetAutoencoder<T>>(cfg, seed);
    else
      transformer_ = std::make_unique<TransformerAutoencoder<T>>(cfg, seed);
  }

  bool is_transformer() const { return transformer_ != nullptr; }
  PointNetAutoencoder<T>& pointnet() const { return *pointnet_; }
  TransformerAutoencoder<T>& transformer() const { return *transformer_; }
  ParameterSet<T>& params() { return is_transformer() ? transformer_->params() : pointnet_->params(); }
  const ParameterSet<T>& params() const { return is_transformer() ? transformer_->params() : pointnet_->params(); }
  const ModelConfig& config() const { return is_transformer() ? transformer_->config() : pointnet_->config(); }

 private:
  std::unique_ptr<PointNetAutoencoder<T>> pointnet_;
  std::unique_ptr<TransformerAutoencoder<T>> transformer_;
};

/// Masks a whole cloud with the configured point-level strategy.
inline MaskedCloud mask_cloud(const PointCloud& cloud, const TrainConfig& cfg, Rng& rng) {
  switch (cfg.mask) {
    case MaskKind::Random: return mask_random_clusters(cloud, cfg.alpha, rng, cfg.kappa_max);
    case MaskKind::Fixed: return mask_fixed_clusters(cloud, cfg.alpha, cfg.cluster_size, rng);
    case MaskKind::View: return mask_view_occlusion(cloud, cfg.alpha, rng);
    case MaskKind::None: return {unmasked_plan(cloud.size()), cloud};
    case MaskKind::Patch: break;
  }
  fail(ErrorKind::Config, "mask=patch applies to patch sequences, not whole clouds");
}

/// Everything one training sample computes, kept for inspection.
template <typename T>
struct SampleTrace {
  AffineTransform affine;
  MaskPlan plan;
  std::optional<PatchSet> clean_patches;      // transformer, normalized
  std::optional<PatchSet> corrupted_patches;  // transformer, normalized
  std::optional<PointCloud> corrupted_input;  // pointnet: masked visible points
  Tensor<T> prediction;                       // reconstructed patches or cloud
  Tensor<T> center_prediction;                // transformer decomposed objectives
  Tensor<T> total;
  double local = 0.0;
  double global = 0.0;
};

/// Forward pass for one sample under the given RNG:
/// decode(encode(mask(affine(X)))) compared against X, or against affine(X)
/// when the affine plays the augmentation role.
template <typename T>
SampleTrace<T> forward_sample(const Model<T>& model, const TrainConfig& cfg, const PointCloud& cloud, Rng& rng) {
  const bool augment = cfg.affine_role == AffineRole::Augmentation;
  SampleTrace<T> tr;
  if (!model.is_transformer()) {
    const auto& net = model.pointnet();
    tr.affine = sample_affine(cfg.affine, rng);
    const PointCloud corrupted = affine_apply(cloud, tr.affine);
    auto masked = mask_cloud(corrupted, cfg, rng);
    tr.plan = std::move(masked.plan);
    tr.corrupted_input = std::move(masked.visible);
    tr.prediction = net.decode(net.encode(points_tensor<T>(tr.corrupted_input->points())));
    const auto& target = augment ? corrupted : cloud;
    tr.total = loss_nontransformer(tr.prediction, points_tensor<T>(target.points()));
    tr.local = static_cast<double>(tr.total.item());
    return tr;
  }

  const auto& net = model.transformer();
  const auto& tc = cfg.model.transformer;
  PatchSet clean = patchify(cloud, tc.patches, tc.patch_size, rng);
  tr.affine = sample_affine(cfg.affine, rng);
  PatchSet corrupted = affine_apply(clean, tr.affine);
  tr.clean_patches = normalize_patches(clean);
  tr.corrupted_patches = normalize_patches(corrupted);
  tr.plan = cfg.mask == MaskKind::None ? unmasked_plan(tc.patches) : mask_patches(tc.patches, cfg.alpha, rng);
  const PatchSet& input = *tr.corrupted_patches;
  const PatchSet& target = augment ? *tr.corrupted_patches : *tr.clean_patches;

  const auto tokens = net.embed(patch_tensor<T>(input, tr.plan.visible));
  const auto encoded = net.encode(tokens, center_tensor<T>(input, tr.plan.visible));

  if (cfg.model.objective == Objective::Whole) {
    tr.prediction = net.predict_cloud(encoded);
    const auto& cloud_target = augment ? affine_apply(cloud, tr.affine) : cloud;
    tr.total = loss_whole(tr.prediction, points_tensor<T>(cloud_target.points()));
    tr.local = static_cast<double>(tr.total.item());
    return tr;
  }

  std::vector<std::size_t> all(tc.patches);
  std::iota(all.begin(), all.end(), std::size_t{0});
  // with nothing masked the decoder reconstructs every patch
  const std::vector<std::size_t>& targets = tr.plan.masked.empty() ? all : tr.plan.masked;
  const auto decoded = net.decode(encoded, center_tensor<T>(target, all), tr.plan, targets);
  tr.prediction = net.predict_patches(decoded);
  const auto local = loss_local(tr.prediction, patch_tensor<T>(target, targets));
  tr.center_prediction = net.predict_centers(encoded);
  const auto global = loss_global(tr.center_prediction, center_tensor<T>(target, all));
  tr.local = static_cast<double>(local.item());
  tr.global = static_cast<double>(global.item());
  switch (cfg.model.objective) {
    case Objective::LocalOnly: tr.total = local; break;
    case Objective::GlobalOnly: tr.total = global; break;
    default: tr.total = loss_all(local, global, cfg.lambda); break;
  }
  return tr;
}

/// Learning rate for a 0-based epoch: optional linear warmup, then cosine
/// decay over the remaining epochs.
inline double epoch_lr(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch < cfg.warmup_epochs)
    return cfg.lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  const std::size_t span = cfg.epochs > cfg.warmup_epochs ? cfg.epochs - cfg.warmup_epochs : 1;
  return cosine_lr(static_cast<double>(epoch - cfg.warmup_epochs), static_cast<double>(span), cfg.lr, cfg.lr_min);
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double total = 0.0;
  double local = 0.0;
  double global = 0.0;
  double lr = 0.0;
};

inline std::string metrics_header() { return "epoch,total,local,global,lr\n"; }

inline std::string metrics_line(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", m.epoch, m.total, m.local, m.global, m.lr);
  return buf;
}

struct TrainResult {
  Checkpoint checkpoint;  // after the last finite epoch
  std::vector<EpochMetrics> metrics;
  bool diverged = false;
  std::string message;
};

template <typename T>
class Pretrainer {
 public:
  /// Fresh model initialized from the config seed.
  explicit Pretrainer(TrainConfig cfg)
      : cfg_(std::move(cfg)),
        model_((cfg_.validate(), cfg_.model), derive_seed(cfg_.seed, kInitStream)),
        shuffle_rng_(derive_seed(cfg_.seed, kShuffleStream)) {}

  /// Continues from a checkpoint written under the same configuration.
  Pretrainer(TrainConfig cfg, const Checkpoint& ck) : Pretrainer(std::move(cfg)) {
    require(ck.fingerprint == fingerprint_of(cfg_.to_text()), ErrorKind::Config,
            "checkpoint was written under a different configuration");
    restore_parameters(model_.params(), ck);
    epoch_ = ck.epoch;
    step_ = ck.step;
    if (!ck.rng_state.empty()) shuffle_rng_ = rng_from_state(ck.rng_state);
  }

  /// Runs the remaining epochs, or stops once `stop_after` epochs are done
  /// when it is non-zero. `on_epoch` sees each epoch's metrics as it
  /// completes.
  TrainResult run(const std::vector<PointCloud>& data,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {}, std::size_t stop_after = 0) {
    require(!data.empty(), ErrorKind::InvalidArgument, "training set is empty");
    for (const auto& c : data)
      require(c.size() == cfg_.model.points, ErrorKind::InvalidArgument,
              "training cloud has " + std::to_string(c.size()) + " points, config expects " +
                  std::to_string(cfg_.model.points));
    TrainResult result;
    result.checkpoint = checkpoint();
    std::vector<std::size_t> order(data.size());
    const std::size_t last = stop_after == 0 ? cfg_.epochs : std::min(stop_after, cfg_.epochs);
    while (epoch_ < last) {
      const Rng saved_rng = shuffle_rng_;
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), shuffle_rng_);
      EpochMetrics m;
      m.epoch = epoch_ + 1;
      m.lr = epoch_lr(cfg_, epoch_);
      std::string failure;
      for (std::size_t b = 0; b < order.size() && failure.empty(); b += cfg_.batch_size) {
        const std::size_t e = std::min(order.size(), b + cfg_.batch_size);
        const T weight = T(1) / static_cast<T>(e - b);
        model_.params().zero_grad();
        for (std::size_t i = b; i < e; ++i) {
          Rng rng(derive_seed(cfg_.seed, epoch_, order[i]));
          auto tr = forward_sample(model_, cfg_, data[order[i]], rng);
          const double total = static_cast<double>(tr.total.item());
          if (!std::isfinite(total)) {
            failure = "non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", sample " + std::to_string(order[i]);
            break;
          }
          m.total += total;
          m.local += tr.local;
          m.global += tr.global;
          backward(scale(tr.total, weight));
        }
        if (failure.empty() && !gradients_finite())
          failure = "non-finite gradient at epoch " + std::to_string(epoch_ + 1);
        if (!failure.empty()) break;
        if (cfg_.grad_clip > 0.0) clip_gradients();
        adamw_step(model_.params(), m.lr, cfg_.adamw, ++step_);
      }
      if (failure.empty() && !parameters_finite()) failure = "non-finite parameters after epoch " + std::to_string(epoch_ + 1);
      if (!failure.empty()) {
        shuffle_rng_ = saved_rng;
        result.diverged = true;
        result.message = failure;
        return result;
      }
      const double count = static_cast<double>(data.size());
      m.total /= count;
      m.local /= count;
      m.global /= count;
      ++epoch_;
      result.metrics.push_back(m);
      result.checkpoint = checkpoint();
      if (on_epoch) on_epoch(m);
    }
    return result;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.config_text = cfg_.to_text();
    ck.fingerprint = fingerprint_of(ck.config_text);
    ck.epoch = epoch_;
    ck.step = step_;
    ck.rng_state = rng_state(shuffle_rng_);
    capture_parameters(model_.params(), ck);
    return ck;
  }

  Model<T>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }

 private:
  bool gradients_finite() const {
    for (const auto& p : model_.params().items())
      for (T g : p.tensor.grad())
        if (!std::isfinite(static_cast<double>(g))) return false;
    return true;
  }

  bool parameters_finite() const {
    for (const auto& p : model_.params().items())
      for (T v : p.tensor.data())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void clip_gradients() {
    double sq = 0.0;
    for (const auto& p : model_.params().items())
      for (T g : p.tensor.grad()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm <= cfg_.grad_clip) return;
    const T f = static_cast<T>(cfg_.grad_clip / norm);
    for (auto& p : model_.params().items())
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.node().grad) g *= f;
  }

  TrainConfig cfg_;
  Model<T> model_;
  Rng shuffle_rng_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
};

/// Rebuilds the configuration a checkpoint was written under.
inline TrainConfig checkpoint_config(const Checkpoint& ck) {
  require(fingerprint_of(ck.config_text) == ck.fingerprint, ErrorKind::Format,
          "checkpoint configuration does not match its fingerprint");
  return parse_train_config(ck.config_text);
}

/// Model with parameters loaded from a checkpoint.
template <typename T>
Model<T> load_model(const Checkpoint& ck) {
  const auto cfg = checkpoint_config(ck);
  Model<T> model(cfg.model, derive_seed(cfg.seed, kInitStream));
  restore_parameters(model.params(), ck);
  return model;
}

}  // namespace pma2e
