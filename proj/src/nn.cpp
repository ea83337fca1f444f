#include "aerialvg/nn.hpp"

#include <cmath>

namespace aerialvg {

Tensor ParameterSet::add(const std::string& name, Tensor t) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::size_t ParameterSet::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

Tensor ParamScope::normal(const std::string& name, Shape shape, double stddev) const {
  return set.add(prefix + name, Tensor::randn(std::move(shape), rng, stddev));
}

Tensor ParamScope::constant(const std::string& name, Shape shape, double value) const {
  return set.add(prefix + name, Tensor::full(std::move(shape), value));
}

Linear Linear::make(const ParamScope& s, std::size_t in, std::size_t out, bool with_bias, double gain) {
  Linear l;
  l.weight = s.normal("weight", {in, out}, gain / std::sqrt(static_cast<double>(in)));
  if (with_bias) l.bias = s.constant("bias", {out}, 0.0);
  return l;
}

Linear Linear::make_zero(const ParamScope& s, std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.weight = s.constant("weight", {in, out}, 0.0);
  if (with_bias) l.bias = s.constant("bias", {out}, 0.0);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  return bias.defined() ? linear(x, weight, bias) : matmul(x, weight);
}

LayerNorm LayerNorm::make(const ParamScope& s, std::size_t width) {
  return {s.constant("gain", {width}, 1.0), s.constant("bias", {width}, 0.0)};
}

Attention Attention::make(const ParamScope& s, std::size_t d) {
  return {Linear::make(s.sub("q"), d, d, false), Linear::make(s.sub("k"), d, d, false),
          Linear::make(s.sub("v"), d, d), Linear::make(s.sub("o"), d, d, true, 0.5)};
}

Tensor Attention::operator()(const Tensor& queries, const Tensor& keys_values) const {
  return o(scaled_dot_attention(q(queries), k(keys_values), v(keys_values)));
}

Mlp Mlp::make(const ParamScope& s, std::size_t in, std::size_t hidden, std::size_t out) {
  return {Linear::make(s.sub("fc1"), in, hidden, true, std::sqrt(2.0)), Linear::make(s.sub("fc2"), hidden, out, true, 0.5)};
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  return matmul(softmax(scale(matmul(q, transpose(k)), inv)), v);
}

}  // namespace aerialvg
