#include "aerialvg/op_checks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aerialvg/grad_check.hpp"
#include "aerialvg/hca.hpp"
#include "aerialvg/losses.hpp"
#include "aerialvg/model.hpp"
#include "aerialvg/nn.hpp"

namespace aerialvg {

namespace {

using UnaryOp = std::function<Tensor(const Tensor&)>;

// Random linear probe so that every output coordinate carries its own weight.
Tensor probe(const Tensor& y, std::uint64_t salt) {
  RngState r(derive_seed(0x5eed, salt));
  return sum(mul(y, Tensor::randn(y.shape(), r)));
}

// Values bounded away from zero, for ops with a kink there.
Tensor away_from_zero(Shape shape, RngState& rng, double gap = 0.1) {
  Tensor t = Tensor::randn(std::move(shape), rng);
  for (double& v : t.mutable_data()) v = v >= 0.0 ? v + gap : v - gap;
  return t;
}

Tensor positive(Shape shape, RngState& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(0.5, 2.0);
  return t;
}

double check1(const UnaryOp& op, const Tensor& x) {
  return grad_check([&](const Tensor& a) { return probe(op(a), 1); }, x);
}

double check2(const std::function<Tensor(const Tensor&, const Tensor&)>& op, const Tensor& a, const Tensor& b) {
  const double ea = grad_check([&](const Tensor& x) { return probe(op(x, b), 2); }, a);
  const double eb = grad_check([&](const Tensor& x) { return probe(op(a, x), 2); }, b);
  return std::max(ea, eb);
}

std::vector<OpCheck> build_checks() {
  std::vector<OpCheck> c;
  c.push_back({"add", [](RngState& r) { return check2(add, Tensor::randn({3, 4}, r), Tensor::randn({3, 4}, r)); }});
  c.push_back({"add_broadcast", [](RngState& r) { return check2(add, Tensor::randn({3, 4}, r), Tensor::randn({1}, r)); }});
  c.push_back({"sub", [](RngState& r) { return check2(sub, Tensor::randn({3, 4}, r), Tensor::randn({3, 4}, r)); }});
  c.push_back({"mul", [](RngState& r) { return check2(mul, Tensor::randn({3, 4}, r), Tensor::randn({3, 4}, r)); }});
  c.push_back({"div", [](RngState& r) { return check2(div, Tensor::randn({3, 4}, r), positive({3, 4}, r)); }});
  c.push_back({"minimum", [](RngState& r) {
                 Tensor a = Tensor::randn({3, 4}, r);
                 Tensor b = add_scalar(a, 0.0);
                 auto bd = b.mutable_data();
                 for (std::size_t i = 0; i < bd.size(); ++i) bd[i] += (i % 2 == 0 ? 0.5 : -0.5);
                 return check2(minimum, a, b);
               }});
  c.push_back({"maximum", [](RngState& r) {
                 Tensor a = Tensor::randn({3, 4}, r);
                 Tensor b = add_scalar(a, 0.0);
                 auto bd = b.mutable_data();
                 for (std::size_t i = 0; i < bd.size(); ++i) bd[i] += (i % 3 == 0 ? 0.5 : -0.5);
                 return check2(maximum, a, b);
               }});
  c.push_back({"scale", [](RngState& r) { return check1([](const Tensor& x) { return scale(x, -1.7); }, Tensor::randn({5}, r)); }});
  c.push_back({"add_scalar", [](RngState& r) { return check1([](const Tensor& x) { return add_scalar(x, 0.3); }, Tensor::randn({5}, r)); }});
  c.push_back({"relu", [](RngState& r) { return check1(relu, away_from_zero({4, 5}, r)); }});
  c.push_back({"sigmoid", [](RngState& r) { return check1(sigmoid, Tensor::randn({4, 5}, r)); }});
  c.push_back({"abs", [](RngState& r) { return check1(aerialvg::abs, away_from_zero({4, 5}, r)); }});
  c.push_back({"log", [](RngState& r) { return check1(aerialvg::log, positive({4, 5}, r)); }});
  c.push_back({"exp", [](RngState& r) { return check1(aerialvg::exp, Tensor::randn({4, 5}, r)); }});
  c.push_back({"square", [](RngState& r) { return check1(square, Tensor::randn({4, 5}, r)); }});
  c.push_back({"reshape", [](RngState& r) { return check1([](const Tensor& x) { return reshape(x, {6, 2}); }, Tensor::randn({3, 4}, r)); }});
  c.push_back({"transpose", [](RngState& r) { return check1([](const Tensor& x) { return transpose(x); }, Tensor::randn({3, 4}, r)); }});
  c.push_back({"transpose_3d", [](RngState& r) { return check1([](const Tensor& x) { return transpose(x); }, Tensor::randn({2, 3, 4}, r)); }});
  c.push_back({"concat", [](RngState& r) {
                 Tensor a = Tensor::randn({2, 3}, r), b = Tensor::randn({4, 3}, r);
                 return check2([](const Tensor& x, const Tensor& y) { return concat({x, y}, 0); }, a, b);
               }});
  c.push_back({"concat_axis1", [](RngState& r) {
                 Tensor a = Tensor::randn({3, 2}, r), b = Tensor::randn({3, 5}, r);
                 return check2([](const Tensor& x, const Tensor& y) { return concat({x, y}, 1); }, a, b);
               }});
  c.push_back({"slice", [](RngState& r) { return check1([](const Tensor& x) { return slice(x, 1, 1, 2); }, Tensor::randn({3, 4}, r)); }});
  c.push_back({"gather_rows", [](RngState& r) {
                 const std::vector<std::size_t> rows = {2, 0, 2, 3};
                 return check1([&](const Tensor& x) { return gather_rows(x, rows); }, Tensor::randn({4, 3}, r));
               }});
  c.push_back({"sum", [](RngState& r) { return check1(sum, Tensor::randn({3, 4}, r)); }});
  c.push_back({"mean", [](RngState& r) { return check1(mean, Tensor::randn({3, 4}, r)); }});
  c.push_back({"mean_rows", [](RngState& r) { return check1(mean_rows, Tensor::randn({3, 4}, r)); }});
  c.push_back({"matmul", [](RngState& r) { return check2(matmul, Tensor::randn({3, 4}, r), Tensor::randn({4, 5}, r)); }});
  c.push_back({"matmul_batched", [](RngState& r) { return check2(matmul, Tensor::randn({2, 3, 4}, r), Tensor::randn({2, 4, 2}, r)); }});
  c.push_back({"linear", [](RngState& r) {
                 Tensor x = Tensor::randn({3, 4}, r), w = Tensor::randn({4, 5}, r), b = Tensor::randn({5}, r);
                 const double e1 = check2([&](const Tensor& xx, const Tensor& ww) { return linear(xx, ww, b); }, x, w);
                 const double e2 = check1([&](const Tensor& bb) { return linear(x, w, bb); }, b);
                 return std::max(e1, e2);
               }});
  c.push_back({"softmax", [](RngState& r) { return check1(softmax, Tensor::randn({3, 5}, r)); }});
  c.push_back({"log_softmax", [](RngState& r) { return check1(log_softmax, Tensor::randn({3, 5}, r)); }});
  c.push_back({"layer_norm", [](RngState& r) {
                 Tensor x = Tensor::randn({3, 6}, r), g = Tensor::randn({6}, r), b = Tensor::randn({6}, r);
                 const double e1 = check1([&](const Tensor& xx) { return layer_norm(xx, g, b); }, x);
                 const double e2 = check2([&](const Tensor& gg, const Tensor& bb) { return layer_norm(x, gg, bb); }, g, b);
                 return std::max(e1, e2);
               }});
  c.push_back({"conv2d_down", [](RngState& r) {
                 return check2([](const Tensor& x, const Tensor& k) { return conv2d_down(x, k, 2); },
                               Tensor::randn({2, 4, 6}, r), Tensor::randn({2, 2, 2}, r));
               }});
  c.push_back({"conv2d_down_shared", [](RngState& r) {
                 return check2([](const Tensor& x, const Tensor& k) { return conv2d_down(x, k, 4); },
                               Tensor::randn({3, 8, 8}, r), Tensor::randn({1, 4, 4}, r));
               }});
  c.push_back({"bilinear_resize", [](RngState& r) {
                 return check1([](const Tensor& x) { return bilinear_resize(x, 5, 7); }, Tensor::randn({2, 2, 3}, r));
               }});
  c.push_back({"patchify", [](RngState& r) { return check1([](const Tensor& x) { return patchify(x, 2); }, Tensor::randn({3, 4, 4}, r)); }});
  c.push_back({"bce_with_logits", [](RngState& r) {
                 const std::vector<double> t = {1, 0, 0, 1, 1, 0};
                 return grad_check([&](const Tensor& x) { return bce_with_logits(x, t); }, Tensor::randn({2, 3}, r));
               }});
  c.push_back({"cross_entropy_at", [](RngState& r) {
                 return grad_check([](const Tensor& x) { return cross_entropy_at(x, 4); }, Tensor::randn({3, 3}, r));
               }});
  c.push_back({"scaled_dot_attention", [](RngState& r) {
                 Tensor q = Tensor::randn({3, 4}, r), k = Tensor::randn({5, 4}, r), v = Tensor::randn({5, 4}, r);
                 const double e1 = check2([&](const Tensor& qq, const Tensor& kk) { return scaled_dot_attention(qq, kk, v); }, q, k);
                 const double e2 = check1([&](const Tensor& vv) { return scaled_dot_attention(q, k, vv); }, v);
                 return std::max(e1, e2);
               }});
  c.push_back({"anchor_top_level", [](RngState& r) {
                 Tensor fine = Tensor::randn({2, 8, 8}, r), top = Tensor::randn({2, 1, 1}, r), k = Tensor::randn({1, 8, 8}, r);
                 const double e1 = check2([&](const Tensor& a, const Tensor& b) { return anchor_top_level(a, b, k, 0.3); }, fine, top);
                 const double e2 = check1([&](const Tensor& kk) { return anchor_top_level(fine, top, kk, 0.3); }, k);
                 return std::max(e1, e2);
               }});
  c.push_back({"refine_downward", [](RngState& r) {
                 Tensor top = Tensor::randn({2, 1, 1}, r);
                 std::array<Tensor, kNumLevels> raw;
                 for (std::size_t i = 0; i < kNumLevels; ++i) {
                   const std::size_t side = std::size_t{8} >> i;
                   raw[i] = Tensor::randn({2, side, side}, r);
                 }
                 auto run = [&](const Tensor& lowest, const Tensor& t) {
                   AttentionPyramid p;
                   p.raw = raw;
                   p.raw[0] = lowest;
                   p.refined[kNumLevels - 1] = t;
                   refine_downward(p, 0.2);
                   return p.refined[0];
                 };
                 return check2(run, raw[0], top);
               }});
  c.push_back({"giou_tensor", [](RngState& r) {
                 const BBox gt{0.4, 0.5, 0.3, 0.2};
                 Tensor p = Tensor::from({1, 4}, {r.uniform(0.3, 0.7), r.uniform(0.3, 0.7), r.uniform(0.2, 0.4), r.uniform(0.2, 0.4)});
                 return grad_check([&](const Tensor& x) { return giou_tensor(x, gt); }, p);
               }});
  c.push_back({"giou_tensor_disjoint", [](RngState& r) {
                 const BBox gt{0.2, 0.2, 0.1, 0.1};
                 Tensor p = Tensor::from({1, 4}, {r.uniform(0.6, 0.8), r.uniform(0.6, 0.8), r.uniform(0.1, 0.2), r.uniform(0.1, 0.2)});
                 return grad_check([&](const Tensor& x) { return giou_tensor(x, gt); }, p);
               }});
  c.push_back({"l1_tensor", [](RngState& r) {
                 const BBox gt{0.4, 0.5, 0.3, 0.2};
                 Tensor p = Tensor::from({1, 4}, {0.6 + 0.1 * r.uniform(), 0.2, 0.5, 0.05});
                 return grad_check([&](const Tensor& x) { return l1_tensor(x, gt); }, p);
               }});
  c.push_back({"relation_loss", [](RngState& r) {
                 return grad_check([](const Tensor& x) { return relation_loss(x, 2, 1); }, Tensor::randn({4, 4}, r));
               }});
  c.push_back({"cls_loss", [](RngState& r) {
                 const Assignment a{{2, 0}, 0.0};
                 const std::vector<std::vector<std::size_t>> spans = {{1, 2}, {4}};
                 return grad_check([&](const Tensor& x) { return cls_loss(x, a, spans); }, Tensor::randn({3, 6}, r));
               }});
  return c;
}

}  // namespace

const std::vector<OpCheck>& op_checks() {
  static const std::vector<OpCheck> checks = build_checks();
  return checks;
}

std::vector<OpCheckResult> run_op_checks(std::uint64_t seed, const std::string& only) {
  std::vector<OpCheckResult> out;
  for (const auto& c : op_checks()) {
    if (!only.empty() && c.name != only) continue;
    RngState rng(derive_seed(seed, std::hash<std::string>{}(c.name)));
    out.push_back({c.name, c.run(rng)});
  }
  if (!only.empty() && out.empty()) throw std::invalid_argument("unknown op: " + only);
  return out;
}

ModelCheckResult full_model_grad_check(std::uint64_t seed, std::size_t coords_per_param) {
  GroundingModel model(ModelConfig{}, derive_seed(seed, 11));
  const GroundingInstance inst = generate_instance(GenConfig{}, derive_seed(seed, 12));
  const ImageRaster img = render(inst.entities, inst.height, inst.width);
  RngState rng(derive_seed(seed, 13));
  // Zero-initialized biases put every black region exactly on a ReLU kink
  // (zero input, zero bias, zero pre-activation). Nudge all parameters off
  // such measure-zero points so one-sided differences agree.
  for (auto e : model.params().entries()) {
    for (double& v : e.second.mutable_data()) v += 1e-3 * rng.normal();
  }

  ModelCheckResult res;
  for (Stage stage : {Stage::backbone, Stage::relation}) {
    model.set_trainable(stage);
    std::vector<std::pair<std::string, Tensor>> params;
    for (const auto& e : model.params().entries()) {
      if (e.second.requires_grad()) params.push_back(e);
    }
    auto loss = [&] { return model.loss(model.forward(img, inst.caption, stage), inst, stage).total; };
    double worst = 0.0;
    for (const auto& pc : grad_check_params(loss, params, coords_per_param, rng)) {
      worst = std::max(worst, pc.max_rel_error);
      res.coords += pc.coords_checked;
    }
    (stage == Stage::backbone ? res.stage1 : res.stage2) = worst;
  }
  model.set_trainable(Stage::backbone);
  return res;
}

}  // namespace aerialvg
