#pragma once

#include <map>
#include <string>
#include <vector>

#include "advlab/params.hpp"

namespace advlab {

// end + 0.5 (start - end)(1 + cos(pi t / T)). Throws std::out_of_range for
// t > T and std::invalid_argument for T < 1.
double cosine_decay(double start, double end, std::size_t t, std::size_t total);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a ParameterSet. Each step replaces the parameter
// tensors with fresh trainable leaves holding the updated values.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}
  // Parameters without an accumulated gradient are treated as having zero gradient.
  void step(ParameterSet& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace advlab
