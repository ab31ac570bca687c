#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pma2e/trainer.hpp"

using namespace pma2e;

namespace {

std::size_t linear_params(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t mlp_params(const std::vector<std::size_t>& w) {
  std::size_t s = 0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) s += linear_params(w[i], w[i + 1]);
  return s;
}

std::size_t block_params(std::size_t d, std::size_t ff) {
  return 4 * d + linear_params(d, 3 * d) + linear_params(d, d) + mlp_params({d, ff * d, d});
}

ModelConfig tiny_transformer() {
  ModelConfig cfg;
  cfg.points = 64;
  cfg.transformer.dim = 16;
  cfg.transformer.heads = 2;
  cfg.transformer.encoder_depth = 2;
  cfg.transformer.decoder_depth = 1;
  cfg.transformer.patches = 8;
  cfg.transformer.patch_size = 8;
  cfg.transformer.embed_hidden = {16};
  cfg.fc_hidden = 32;
  cfg.fold_hidden = 16;
  return cfg;
}

template <typename T>
Tensor<T> random_tensor(std::mt19937_64& g, Shape shape) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(g));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

std::vector<Vec3> cloud_points(std::uint64_t seed, std::size_t w) {
  std::mt19937_64 g(seed);
  const auto pts = oracle::random_points(g, w);
  return {pts.begin(), pts.end()};
}

}  // namespace

TEST(PointNetEncoder, PermutationInvariantAndShape) {
  ModelConfig cfg;
  cfg.encoder = EncoderKind::PointNet;
  cfg.points = 32;
  const PointNetAutoencoder<float> model(cfg, 1);
  auto pts = cloud_points(2, 50);
  const auto f1 = model.encode(points_tensor<float>(pts));
  std::mt19937_64 g(3);
  std::shuffle(pts.begin(), pts.end(), g);
  const auto f2 = model.encode(points_tensor<float>(pts));
  EXPECT_EQ(f1.shape(), (Shape{64}));
  EXPECT_EQ(f1.values(), f2.values());
  EXPECT_EQ(model.encode(points_tensor<float>(cloud_points(4, 7))).shape(), (Shape{64}));
  EXPECT_EQ(model.decode(f1).shape(), (Shape{32, 3}));
}

TEST(PointNetEncoder, SinglePointIsMlpOfThatPoint) {
  ModelConfig cfg;
  cfg.encoder = EncoderKind::PointNet;
  cfg.pointnet.widths = {3, 8, 4};
  ParameterSet<double> ps;
  Rng r1(5), r2(5);
  const PointNetEncoder<double> enc(ps, "e", cfg.pointnet, r1);
  ParameterSet<double> ps2;
  const Mlp<double> mlp(ps2, "e", cfg.pointnet.widths, Activation::Relu, r2);
  const auto x = Tensor<double>::from({1, 3}, {0.3, -0.1, 0.7});
  EXPECT_EQ(enc(x).values(), mlp(x).values());
}

TEST(TokenEmbedding, PermutationWithinPatchAndShape) {
  const auto cfg = tiny_transformer();
  const TransformerAutoencoder<float> model(cfg, 1);
  std::mt19937_64 g(1);
  auto p = random_tensor<float>(g, {3, 8, 3});
  const auto t = model.embed(p);
  EXPECT_EQ(t.shape(), (Shape{3, 16}));
  auto q = p.values();
  std::swap_ranges(q.begin(), q.begin() + 3, q.begin() + 9);  // swap points 0 and 3 of patch 0
  const auto t2 = model.embed(Tensor<float>::from({3, 8, 3}, q));
  EXPECT_EQ(t.values(), t2.values());
  std::vector<float> twin(p.values().begin(), p.values().begin() + 24);
  twin.insert(twin.end(), twin.begin(), twin.end());
  const auto tt = model.embed(Tensor<float>::from({2, 8, 3}, twin));
  EXPECT_TRUE(std::equal(tt.values().begin(), tt.values().begin() + 16, tt.values().begin() + 16));
}

TEST(TokenEmbedding, UnnormalizedPatchesAreRejected) {
  Rng rng(1);
  const auto ps = patchify(PointCloud(cloud_points(1, 32)), 4, 8, rng);
  const std::vector<std::size_t> rows{0, 1};
  EXPECT_THROW(patch_tensor<float>(ps, rows), Error);
  EXPECT_EQ(patch_tensor<float>(normalize_patches(ps), rows).shape(), (Shape{2, 8, 3}));
}

TEST(PositionalEmbedding, ZeroInitAndSeparateWeights) {
  const auto cfg = tiny_transformer();
  TransformerAutoencoder<double> model(cfg, 3);
  std::mt19937_64 g(2);
  const auto c = random_tensor<double>(g, {5, 3});
  const auto pe_enc = model.pe_encoder(c), pe_dec = model.pe_decoder(c);
  for (double v : pe_enc.values()) EXPECT_EQ(v, 0.0);
  for (double v : pe_dec.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(model.pe_decoder(random_tensor<double>(g, {8, 3})).shape(), (Shape{8, 16}));
  // independent perturbation of one table leaves the other at zero
  for (auto& p : model.params().items())
    if (p.name.rfind("pe_encoder.", 0) == 0)
      for (auto& v : p.tensor.values()) v += 0.1;
  EXPECT_NE(model.pe_encoder(c).values(), model.pe_decoder(c).values());
}

TEST(TransformerEncoder, DepthZeroIsIdentity) {
  ParameterSet<double> ps;
  Rng rng(1);
  const TransformerStack<double> stack(ps, "s", 0, 8, 2, 4, rng);
  std::mt19937_64 g(1);
  const auto x = random_tensor<double>(g, {4, 8});
  EXPECT_EQ(stack(x, Tensor<double>::zeros({4, 8})).values(), x.values());
  EXPECT_EQ(ps.scalar_count(), 0u);
}

TEST(TransformerEncoder, PermutationEquivariant) {
  const auto cfg = tiny_transformer();
  const TransformerAutoencoder<double> model(cfg, 4);
  std::mt19937_64 g(5);
  const auto tokens = random_tensor<double>(g, {6, 16});
  const auto centers = random_tensor<double>(g, {6, 3});
  const auto out = model.encode(tokens, centers);
  EXPECT_EQ(out.shape(), (Shape{6, 16}));
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  const auto out_p = model.encode(gather_rows(tokens, perm), gather_rows(centers, perm));
  const auto expected = gather_rows(out, perm);
  for (std::size_t i = 0; i < out_p.numel(); ++i) EXPECT_NEAR(out_p.values()[i], expected.values()[i], 1e-12);
}

TEST(PatchDecoder, AssemblesDuplicatedMaskToken) {
  const auto cfg = tiny_transformer();
  const TransformerAutoencoder<float> model(cfg, 5);
  std::mt19937_64 g(6);
  Rng rng(1);
  const auto plan = mask_patches(8, 0.6, rng);  // 4 masked, 4 visible
  const auto encoded = random_tensor<float>(g, {plan.visible.size(), 16});
  const auto seq = model.patch_decoder().assemble(encoded, plan);
  ASSERT_EQ(seq.shape(), (Shape{8, 16}));
  const auto& token = model.patch_decoder().mask_token().values();
  for (auto m : plan.masked)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(seq.values()[m * 16 + j], token[j]);
  for (std::size_t r = 0; r < plan.visible.size(); ++r)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(seq.values()[plan.visible[r] * 16 + j], encoded.values()[r * 16 + j]);
  EXPECT_EQ(model.patch_decoder().mask_token().numel(), 16u);
}

TEST(PatchDecoder, OneVisibleTokenAndOrdering) {
  const auto cfg = tiny_transformer();
  const TransformerAutoencoder<double> model(cfg, 6);
  std::mt19937_64 g(7);
  MaskPlan plan;
  plan.visible = {5};
  plan.masked = {0, 1, 2, 3, 4, 6, 7};
  const auto centers = random_tensor<double>(g, {8, 3});
  const auto encoded = random_tensor<double>(g, {1, 16});
  const auto out = model.decode(encoded, centers, plan, plan.masked);
  EXPECT_EQ(out.shape(), (Shape{7, 16}));
  // rows follow the target order: decoding all then picking matches
  std::vector<std::size_t> all(8);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto full = model.decode(encoded, centers, plan, all);
  EXPECT_EQ(gather_rows(full, plan.masked).values(), out.values());
  EXPECT_THROW(model.decode(random_tensor<double>(g, {2, 16}), centers, plan, plan.masked), Error);
}

TEST(Heads, FcAndFoldShapes) {
  ParameterSet<float> ps;
  Rng rng(1);
  const PointHead<float> fc(ps, "fc", HeadKind::Fc, 16, 32, 64, 16, rng);
  std::mt19937_64 g(8);
  const auto f1 = random_tensor<float>(g, {16}), f2 = random_tensor<float>(g, {16});
  EXPECT_EQ(fc(f1).shape(), (Shape{32, 3}));
  EXPECT_NE(fc(f1).values(), fc(f2).values());

  const PointHead<float> fold(ps, "fold", HeadKind::Fold, 16, 8, 64, 16, rng);
  auto rows = f1.values();
  rows.insert(rows.end(), f1.values().begin(), f1.values().end());
  const auto out = fold(Tensor<float>::from({2, 16}, rows));
  ASSERT_EQ(out.shape(), (Shape{2, 8, 3}));
  EXPECT_TRUE(std::equal(out.values().begin(), out.values().begin() + 24, out.values().begin() + 24));

  const PointHead<float> single(ps, "one", HeadKind::Fold, 16, 1, 64, 16, rng);
  EXPECT_EQ(single(Tensor<float>::from({1, 16}, f1.values())).shape(), (Shape{1, 1, 3}));
}

TEST(Heads, FoldingGrid) {
  EXPECT_EQ(folding_grid(1), (std::vector<double>{0.0, 0.0}));
  // 3 columns by 2 rows, x varying fastest
  EXPECT_EQ(folding_grid(6), (std::vector<double>{-0.5, -0.5, 0.0, -0.5, 0.5, -0.5, -0.5, 0.5, 0.0, 0.5, 0.5, 0.5}));
  EXPECT_EQ(folding_grid(5).size(), 10u);
  for (double v : folding_grid(16)) EXPECT_LE(std::abs(v), 0.5);
}

TEST(Heads, CenterHeadPoolingInvariance) {
  const auto cfg = tiny_transformer();
  const TransformerAutoencoder<float> model(cfg, 7);
  std::mt19937_64 g(9);
  const auto enc = random_tensor<float>(g, {5, 16});
  const auto out = model.predict_centers(enc);
  EXPECT_EQ(out.shape(), (Shape{8, 3}));
  const auto permuted = model.predict_centers(gather_rows(enc, {4, 2, 0, 1, 3}));
  EXPECT_EQ(out.values(), permuted.values());
  const auto one = random_tensor<float>(g, {1, 16});
  EXPECT_EQ(max_pool(one, 0).values(), one.values());
}

TEST(ParameterCount, MatchesClosedForm) {
  const auto cfg = tiny_transformer();
  const TransformerAutoencoder<float> model(cfg, 1);
  const std::size_t d = 16;
  const std::size_t expected = mlp_params({3, 16, d}) + 2 * mlp_params({3, 2 * d, d}) + 2 * block_params(d, 4) +
                               d + 1 * block_params(d, 4) + mlp_params({d + 2, 16, 16, 3}) +
                               mlp_params({d, 32, 32, 3 * 8});
  EXPECT_EQ(model.params().scalar_count(), expected);

  ModelConfig pn;
  pn.encoder = EncoderKind::PointNet;
  pn.points = 128;
  pn.cloud_head = HeadKind::Fold;
  const PointNetAutoencoder<float> pmodel(pn, 1);
  EXPECT_EQ(pmodel.params().scalar_count(), mlp_params({3, 64, 128, 64}) + mlp_params({66, 64, 64, 3}));

  auto whole = cfg;
  whole.objective = Objective::Whole;
  const TransformerAutoencoder<float> wmodel(whole, 1);
  EXPECT_EQ(wmodel.params().scalar_count(),
            mlp_params({3, 16, d}) + mlp_params({3, 2 * d, d}) + 2 * block_params(d, 4) + mlp_params({d, 32, 32, 3 * 64}));
}

TEST(ModelConfig, Validation) {
  auto cfg = tiny_transformer();
  cfg.transformer.decoder_depth = 2;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_transformer();
  cfg.transformer.heads = 3;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(EndToEnd, DecomposedLossGradientMatchesFiniteDifferences) {
  TrainConfig tc;
  tc.model = tiny_transformer();
  tc.precision = Precision::Double;
  tc.alpha = 0.5;
  tc.validate();
  Model<double> model(tc.model, 11);
  // Move zero-initialized tensors off their initial values: the PE output
  // layers would block gradient, and zero biases put every patch center
  // (the origin after normalization) exactly on a ReLU kink.
  std::mt19937_64 g(12);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& p : model.params().items())
    if (p.name.find("pe_") == 0 || p.name.find("bias") != std::string::npos)
      for (auto& v : p.tensor.values()) v += u(g);
  const PointCloud cloud(cloud_points(13, 64));
  std::vector<Tensor<double>> inputs;
  for (auto& p : model.params().items()) inputs.push_back(p.tensor);
  auto f = [&] {
    Rng rng(14);
    return forward_sample(model, tc, cloud, rng).total;
  };
  const double err = finite_difference_check(f, inputs, 1e-4, 6);
  EXPECT_LT(err, 1e-3);
}
