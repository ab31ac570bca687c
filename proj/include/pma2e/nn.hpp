#pragma once

// Parameter registry and layer building blocks on top of the autograd engine.

#include <cmath>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"

namespace pma2e {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
};

/// Ordered table of named learnable tensors. Registration order is the
/// serialization order.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> create(const std::string& name, Shape shape, std::vector<T> init) {
    for (const auto& p : items_)
      require(p.name != name, ErrorKind::InvalidArgument, "duplicate parameter name " + name);
    auto t = Tensor<T>::from(std::move(shape), std::move(init), true);
    items_.push_back({name, t, std::vector<T>(t.numel(), T(0)), std::vector<T>(t.numel(), T(0))});
    return t;
  }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> items_;
};

template <typename T>
std::vector<T> xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<T> w(fan_in * fan_out);
  for (auto& v : w) v = static_cast<T>(u(rng));
  return w;
}

enum class Activation { Relu, Gelu };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  return a == Activation::Relu ? relu(x) : gelu(x);
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool zero_init = false)
      : in_(in), out_(out) {
    weight_ = ps.create(name + ".weight", {in, out}, zero_init ? std::vector<T>(in * out, T(0)) : xavier_uniform<T>(rng, in, out));
    bias_ = ps.create(name + ".bias", {out}, std::vector<T>(out, T(0)));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight_), bias_); }

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_;
};

/// Shared MLP applied over the last axis; the activation sits between
/// layers, not after the last one.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet<T>& ps, const std::string& name, const std::vector<std::size_t>& widths, Activation act, Rng& rng,
      bool zero_init_last = false)
      : act_(act) {
    require(widths.size() >= 2, ErrorKind::Config, name + ": an MLP needs at least input and output widths");
    for (auto w : widths) require(w >= 1, ErrorKind::Config, name + ": widths must be positive");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      layers_.emplace_back(ps, name + "." + std::to_string(i), widths[i], widths[i + 1], rng, last && zero_init_last);
    }
  }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (i + 1 < layers_.size()) x = activate(x, act_);
    }
    return x;
  }

  std::size_t out() const { return layers_.back().out(); }

 private:
  std::vector<Linear<T>> layers_;
  Activation act_ = Activation::Relu;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t dim) {
    gamma_ = ps.create(name + ".gamma", {dim}, std::vector<T>(dim, T(1)));
    beta_ = ps.create(name + ".beta", {dim}, std::vector<T>(dim, T(0)));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor<T> gamma_, beta_;
};

/// Multi-head scaled dot-product self-attention over a [t, d] sequence.
template <typename T>
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng)
      : dim_(dim), heads_(heads) {
    require(heads >= 1 && dim % heads == 0, ErrorKind::Config, "attention: dim must be divisible by heads");
    qkv_ = Linear<T>(ps, name + ".qkv", dim, 3 * dim, rng);
    proj_ = Linear<T>(ps, name + ".proj", dim, dim, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const Tensor<T> qkv = qkv_(x);
    const std::size_t hd = dim_ / heads_;
    const T inv = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
    std::vector<Tensor<T>> outs;
    outs.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
      const auto q = slice_last(qkv, h * hd, hd);
      const auto k = slice_last(qkv, dim_ + h * hd, hd);
      const auto v = slice_last(qkv, 2 * dim_ + h * hd, hd);
      const auto attn = softmax(scale(matmul(q, transpose(k)), inv));
      outs.push_back(matmul(attn, v));
    }
    return proj_(heads_ == 1 ? outs[0] : concat(outs, 1));
  }

 private:
  std::size_t dim_ = 0, heads_ = 1;
  Linear<T> qkv_, proj_;
};

/// Pre-norm Transformer block. The positional embedding is added to the
/// block input.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t heads,
                   std::size_t ff_mult, Rng& rng)
      : norm1_(ps, name + ".norm1", dim),
        attn_(ps, name + ".attn", dim, heads, rng),
        norm2_(ps, name + ".norm2", dim),
        ff_(ps, name + ".ff", {dim, ff_mult * dim, dim}, Activation::Gelu, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& pe) const {
    Tensor<T> h = add(x, pe);
    h = add(h, attn_(norm1_(h)));
    return add(h, ff_(norm2_(h)));
  }

 private:
  LayerNorm<T> norm1_;
  SelfAttention<T> attn_;
  LayerNorm<T> norm2_;
  Mlp<T> ff_;
};

template <typename T>
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(ParameterSet<T>& ps, const std::string& name, std::size_t depth, std::size_t dim,
                   std::size_t heads, std::size_t ff_mult, Rng& rng) {
    for (std::size_t i = 0; i < depth; ++i)
      blocks_.emplace_back(ps, name + "." + std::to_string(i), dim, heads, ff_mult, rng);
  }

  Tensor<T> operator()(Tensor<T> x, const Tensor<T>& pe) const {
    if (x.shape() != pe.shape()) shape_error("transformer", x.shape(), pe.shape());
    for (const auto& b : blocks_) x = b(x, pe);
    return x;
  }

  std::size_t depth() const { return blocks_.size(); }

 private:
  std::vector<TransformerBlock<T>> blocks_;
};

}  // namespace pma2e
