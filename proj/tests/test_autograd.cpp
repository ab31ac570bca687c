#include <gtest/gtest.h>

#include <random>

#include "pma2e/autograd.hpp"

using namespace pma2e;
using Td = Tensor<double>;

namespace {

struct Gen {
  std::mt19937_64 g;
  explicit Gen(std::uint64_t seed) : g(seed) {}

  std::size_t size(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(g); }

  Td tensor(Shape shape, bool grad = true, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(g);
    return Td::from(std::move(shape), std::move(v), grad);
  }

  /// Values bounded away from zero, for kinked ops.
  Td away_from_zero(Shape shape) {
    auto t = tensor(std::move(shape));
    for (auto& x : t.values()) x = (x < 0 ? -0.05 : 0.05) + x;
    return t;
  }

  /// Entries spaced at least 1e-2 apart so the argmax cannot flip under a
  /// finite-difference step.
  Td distinct(Shape shape) {
    const auto n = shape_numel(shape);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 0.01 * double(i);
    std::shuffle(v.begin(), v.end(), g);
    return Td::from(std::move(shape), std::move(v), true);
  }
};

template <typename Build>
void check_op(const char* name, Build build) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Gen gen(seed);
    std::vector<Td> inputs;
    std::function<Td()> body = build(gen, inputs);
    // contract the output with fixed random weights for a non-trivial upstream gradient
    Gen weights(seed + 1000);
    Td probe = body();
    std::vector<double> w(probe.numel());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& x : w) x = u(weights.g);
    const Td wt = Td::from(probe.shape(), w);
    auto f = [&] { return sum(mul(body(), wt)); };
    const double err = finite_difference_check(f, inputs);
    ASSERT_LT(err, 1e-3) << name << " seed " << seed;
  }
}

}  // namespace

TEST(AutogradExamples, ReluClampsNegatives) {
  const auto y = relu(Td::from({3}, {-1, 0, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 2}));
}

TEST(AutogradExamples, SoftmaxOfConstantIsUniform) {
  const auto y = softmax(Td::from({4}, {3, 3, 3, 3}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(AutogradExamples, MaxPoolShape) {
  Gen gen(1);
  EXPECT_EQ(max_pool(gen.tensor({5, 7, 3}), 1).shape(), (Shape{5, 3}));
}

TEST(AutogradExamples, SumGradientIsOnes) {
  auto x = Td::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(x));
  EXPECT_EQ(x.grad_or_zero(), std::vector<double>(6, 1.0));
}

TEST(AutogradExamples, SquareAtThree) {
  auto x = Td::scalar(3.0, true);
  backward(mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(AutogradExamples, TwoPathsAccumulate) {
  auto x = Td::from({2}, {1.5, -2.0}, true);
  backward(sum(add(scale(x, 2.0), scale(x, 3.0))));
  EXPECT_EQ(x.grad_or_zero(), (std::vector<double>{5.0, 5.0}));
}

TEST(AutogradExamples, NonScalarLossIsRejected) {
  auto x = Td::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(x), Error);
}

TEST(AutogradExamples, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Td::zeros({2, 3}), Td::zeros({4, 5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
  }
}

TEST(AutogradExamples, IndependentParameterGetsZeroGradient) {
  auto used = Td::from({3}, {1, 2, 3}, true);
  auto unused = Td::from({3}, {4, 5, 6}, true);
  auto both = add(scale(unused, 0.0), used);  // reachable, but multiplied away
  backward(sum(mul(used, used)));
  EXPECT_FALSE(unused.has_grad());
  backward(sum(both));
  EXPECT_EQ(unused.grad_or_zero(), std::vector<double>(3, 0.0));
}

TEST(AutogradExamples, MaxPoolTiesRouteToFirst) {
  auto x = Td::from({3, 1}, {2, 2, 1}, true);
  backward(sum(max_pool(x, 0)));
  EXPECT_EQ(x.grad_or_zero(), (std::vector<double>{1, 0, 0}));
}

TEST(AutogradExamples, LinearFunctionIsExactToRounding) {
  Gen gen(3);
  auto x = gen.tensor({4, 5});
  const auto w = gen.tensor({5, 2}, false);
  const double err = finite_difference_check([&](const Td& t) { return sum(matmul(t, w)); }, x);
  EXPECT_LT(err, 1e-8);
}

TEST(AutogradExamples, ForwardIsDeterministic) {
  auto run = [] {
    Gen gen(11);
    auto x = gen.tensor({6, 8});
    auto w = gen.tensor({8, 8});
    auto g = gen.tensor({8}), b = gen.tensor({8});
    return softmax(layer_norm(gelu(matmul(x, w)), g, b)).values();
  };
  EXPECT_EQ(run(), run());
}

TEST(GradientCheck, Matmul) {
  check_op("matmul", [](Gen& gen, std::vector<Td>& in) {
    const auto m = gen.size(1, 5), k = gen.size(1, 6), n = gen.size(1, 5);
    auto a = gen.tensor({gen.size(1, 3), m, k});
    auto b = gen.tensor({k, n});
    in = {a, b};
    return std::function<Td()>([=] { return matmul(a, b); });
  });
}

TEST(GradientCheck, AddWithBroadcast) {
  check_op("add", [](Gen& gen, std::vector<Td>& in) {
    const auto r = gen.size(1, 5), c = gen.size(1, 5);
    auto a = gen.tensor({r, c});
    auto b = gen.size(0, 1) ? gen.tensor({c}) : gen.tensor({r, c});
    in = {a, b};
    return std::function<Td()>([=] { return add(a, b); });
  });
}

TEST(GradientCheck, ScaleAndSub) {
  check_op("scale", [](Gen& gen, std::vector<Td>& in) {
    auto a = gen.tensor({gen.size(1, 6), 3});
    auto b = gen.tensor(a.shape());
    const double s = std::uniform_real_distribution<double>(-3, 3)(gen.g);
    in = {a, b};
    return std::function<Td()>([=] { return sub(scale(a, s), b); });
  });
}

TEST(GradientCheck, Concat) {
  check_op("concat", [](Gen& gen, std::vector<Td>& in) {
    const auto r = gen.size(1, 4), c1 = gen.size(1, 4), c2 = gen.size(1, 4);
    const std::size_t axis = gen.size(0, 1);
    auto a = gen.tensor({r, c1});
    auto b = axis == 1 ? gen.tensor({r, c2}) : gen.tensor({c2, c1});
    in = {a, b};
    return std::function<Td()>([=] { return concat<double>({a, b}, axis); });
  });
}

TEST(GradientCheck, ReshapeAndTranspose) {
  check_op("reshape", [](Gen& gen, std::vector<Td>& in) {
    const auto r = gen.size(1, 5), c = gen.size(1, 5);
    auto a = gen.tensor({r * c});
    in = {a};
    return std::function<Td()>([=] { return transpose(reshape(a, {r, c})); });
  });
}

TEST(GradientCheck, Relu) {
  check_op("relu", [](Gen& gen, std::vector<Td>& in) {
    auto a = gen.away_from_zero({gen.size(1, 6), gen.size(1, 6)});
    in = {a};
    return std::function<Td()>([=] { return relu(a); });
  });
}

TEST(GradientCheck, Gelu) {
  check_op("gelu", [](Gen& gen, std::vector<Td>& in) {
    auto a = gen.tensor({gen.size(1, 6), gen.size(1, 6)}, true, -3, 3);
    in = {a};
    return std::function<Td()>([=] { return gelu(a); });
  });
}

TEST(GradientCheck, Softmax) {
  check_op("softmax", [](Gen& gen, std::vector<Td>& in) {
    auto a = gen.tensor({gen.size(1, 4), gen.size(1, 7)}, true, -2, 2);
    in = {a};
    return std::function<Td()>([=] { return softmax(a); });
  });
}

TEST(GradientCheck, LayerNorm) {
  check_op("layer_norm", [](Gen& gen, std::vector<Td>& in) {
    const auto d = gen.size(2, 8);
    auto x = gen.tensor({gen.size(1, 4), d}, true, -2, 2);
    auto g = gen.tensor({d}), b = gen.tensor({d});
    in = {x, g, b};
    return std::function<Td()>([=] { return layer_norm(x, g, b); });
  });
}

TEST(GradientCheck, MaxPool) {
  check_op("max_pool", [](Gen& gen, std::vector<Td>& in) {
    Shape s{gen.size(1, 4), gen.size(1, 5), gen.size(1, 4)};
    const auto axis = gen.size(0, 2);
    auto a = gen.distinct(s);
    in = {a};
    return std::function<Td()>([=] { return max_pool(a, axis); });
  });
}

TEST(GradientCheck, MeanPool) {
  check_op("mean_pool", [](Gen& gen, std::vector<Td>& in) {
    Shape s{gen.size(1, 4), gen.size(1, 5), gen.size(1, 4)};
    const auto axis = gen.size(0, 2);
    auto a = gen.tensor(s);
    in = {a};
    return std::function<Td()>([=] { return mean_pool(a, axis); });
  });
}

TEST(GradientCheck, GatherAndScatterRows) {
  check_op("gather_scatter", [](Gen& gen, std::vector<Td>& in) {
    const auto rows = gen.size(2, 8), width = gen.size(1, 4);
    auto a = gen.tensor({rows, width});
    std::vector<std::size_t> idx(rows);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), gen.g);
    const auto keep = gen.size(1, rows);
    std::vector<std::size_t> picked(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep));
    std::vector<std::size_t> repeats{picked[0], picked[0], picked.back()};
    in = {a};
    return std::function<Td()>([=] {
      return concat<double>({gather_rows(a, repeats), scatter_rows(gather_rows(a, picked), picked, rows)}, 0);
    });
  });
}

TEST(GradientCheck, SliceAndMul) {
  check_op("slice_mul", [](Gen& gen, std::vector<Td>& in) {
    const auto c = gen.size(2, 6);
    auto a = gen.tensor({gen.size(1, 4), c});
    auto b = gen.tensor(a.shape());
    const auto begin = gen.size(0, c - 1);
    in = {a, b};
    return std::function<Td()>([=] { return slice_last(mul(a, b), begin, c - begin); });
  });
}

TEST(GradientCheck, MeanReduction) {
  check_op("mean", [](Gen& gen, std::vector<Td>& in) {
    auto a = gen.tensor({gen.size(1, 5), gen.size(1, 5)});
    in = {a};
    return std::function<Td()>([=] { return reshape(mean(mul(a, a)), {1}); });
  });
}
