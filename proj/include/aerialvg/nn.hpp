#pragma once

#include <string>
#include <utility>
#include <vector>

#include "aerialvg/rng.hpp"
#include "aerialvg/tensor.hpp"

namespace aerialvg {

using NamedTensor = std::pair<std::string, Tensor>;

// Ordered registry of trainable leaves. Handles share storage with the
// modules that own them, so loading values here updates the model in place.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Tensor t);
  const std::vector<NamedTensor>& entries() const { return entries_; }
  const Tensor* find(const std::string& name) const;
  std::size_t total_size() const;

 private:
  std::vector<NamedTensor> entries_;
};

// Scoped name prefix used while building a module's parameters.
struct ParamScope {
  ParameterSet& set;
  std::string prefix;
  RngState& rng;

  ParamScope sub(const std::string& name) const { return {set, prefix + name + ".", rng}; }
  Tensor normal(const std::string& name, Shape shape, double stddev) const;
  Tensor constant(const std::string& name, Shape shape, double value) const;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when the layer has no bias

  static Linear make(const ParamScope& s, std::size_t in, std::size_t out, bool with_bias = true,
                     double gain = 1.0);
  static Linear make_zero(const ParamScope& s, std::size_t in, std::size_t out, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain, bias;
  static LayerNorm make(const ParamScope& s, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

// Single-head scaled dot-product attention with input/output projections.
struct Attention {
  Linear q, k, v, o;
  static Attention make(const ParamScope& s, std::size_t d);
  Tensor operator()(const Tensor& queries, const Tensor& keys_values) const;
};

// Two-layer ReLU MLP.
struct Mlp {
  Linear fc1, fc2;
  static Mlp make(const ParamScope& s, std::size_t in, std::size_t hidden, std::size_t out);
  Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }
};

// softmax(q k^T / sqrt(width)) v over already-projected rows.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace aerialvg
