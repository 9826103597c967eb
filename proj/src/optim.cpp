#include "advlab/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "advlab/params.hpp"

namespace advlab {

double cosine_decay(double start, double end, std::size_t t, std::size_t total) {
  if (total < 1) throw std::invalid_argument("cosine_decay: total steps must be >= 1");
  if (t > total) throw std::out_of_range("cosine_decay: step beyond schedule length");
  const double ratio = static_cast<double>(t) / static_cast<double>(total);
  return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * ratio));
}

void AdamOptimizer::step(ParameterSet& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, tensor] : params.items()) {
    auto& mom = state_[name];
    const std::size_t n = tensor.numel();
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    auto g = tensor.grad();
    std::vector<double> values = tensor.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      values[i] -= lr * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + cfg_.eps);
    }
    params.set(name, Tensor(tensor.shape(), std::move(values), true));
  }
}

}  // namespace advlab
