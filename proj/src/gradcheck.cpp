#include "sma/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sma/random.hpp"

namespace sma {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const Tensor out = f();
  if (out.numel() != 1) throw NumericError("grad_check: function must return a scalar");
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opt) {
  for (auto& t : inputs) {
    if (!t.is_leaf()) throw NumericError("grad_check: inputs must be leaf tensors");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape::current().clear();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  const double base = evaluate(f);
  if (evaluate(f) != base) throw NumericError("grad_check: function is not deterministic");

  GradCheckResult result;
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opt.max_coords_per_input && coords.size() > opt.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + opt.eps;
      const double plus = evaluate(f);
      values[i] = saved - opt.eps;
      const double minus = evaluate(f);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opt.eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coords_checked;
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  GradCheckOptions opt;
  opt.eps = eps;
  return grad_check([&] { return f(x); }, {x}, opt).max_rel_error;
}

}  // namespace sma
