#include "aerialvg/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace aerialvg {

namespace {

double eval_value(const std::function<Tensor()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

double central_difference(const std::function<Tensor()>& f, Tensor& x, std::size_t i, double h) {
  auto data = x.mutable_data();
  const double orig = data[i];
  data[i] = orig + h;
  const double up = eval_value(f);
  data[i] = orig - h;
  const double down = eval_value(f);
  data[i] = orig;
  return (up - down) / (2.0 * h);
}

double rel_error(double ad, double fd) { return std::abs(ad - fd) / std::max(1.0, std::abs(ad)); }

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x_in, double h,
                  std::span<const std::size_t> coords) {
  Tensor x = x_in;
  const bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic(x.numel(), 0.0);
  {
    Tape tape;
    const Tensor y = f(x);
    if (!std::isfinite(y.item())) throw NumericError("grad_check: function value is not finite");
    tape.backward(y);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  }
  x.zero_grad();
  x.set_requires_grad(had_grad);

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }
  const std::function<Tensor()> probe = [&] { return f(x); };
  double worst = 0.0;
  for (std::size_t i : coords) worst = std::max(worst, rel_error(analytic[i], central_difference(probe, x, i, h)));
  return worst;
}

std::vector<ParamCheck> grad_check_params(const std::function<Tensor()>& loss,
                                          const std::vector<std::pair<std::string, Tensor>>& params,
                                          std::size_t coords_per_param, RngState& rng, double h) {
  std::vector<std::vector<double>> analytic;
  {
    for (const auto& [name, p] : params) p.node()->grad.clear();
    Tape tape;
    const Tensor y = loss();
    if (!std::isfinite(y.item())) throw NumericError("grad_check: loss is not finite");
    tape.backward(y);
    for (const auto& [name, p] : params) {
      analytic.emplace_back(p.numel(), 0.0);
      if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.back().begin());
      p.node()->grad.clear();
    }
  }
  std::vector<ParamCheck> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].second;
    ParamCheck pc{params[k].first, 0.0, 0};
    const std::size_t n = std::min(coords_per_param, p.numel());
    for (std::size_t c = 0; c < n; ++c) {
      const auto i = n == p.numel() ? c : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.numel()) - 1));
      pc.max_rel_error = std::max(pc.max_rel_error, rel_error(analytic[k][i], central_difference(loss, p, i, h)));
      ++pc.coords_checked;
    }
    out.push_back(pc);
  }
  return out;
}

}  // namespace aerialvg
