#include "mtlta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mtlta {

namespace {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double gradcheck_params(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[t][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  Tensor params[] = {leaf};
  return gradcheck_params([&] { return f(leaf); }, params, eps);
}

}  // namespace mtlta
