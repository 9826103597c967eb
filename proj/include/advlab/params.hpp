#pragma once

#include <string>
#include <utility>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

// Ordered collection of named parameter tensors. Order is insertion order and
// is what checkpoints and optimizers iterate over.
class ParameterSet {
 public:
  void add(std::string name, Tensor t);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  // Replaces an existing entry, keeping its position.
  void set(const std::string& name, Tensor t);

  std::size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t total_elements() const;

  // Copies whose tensors do not require gradients; safe to share read-only
  // across threads while another thread differentiates through its own graph.
  ParameterSet frozen() const;
  // Fresh leaves that require gradients.
  ParameterSet trainable() const;
  void zero_grad() const;
  bool all_finite() const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace advlab
