#include "advlab/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advlab {

void ParameterSet::add(std::string name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' already present");
  items_.emplace_back(std::move(name), std::move(t));
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw std::out_of_range("no parameter named '" + name + "'");
}

void ParameterSet::set(const std::string& name, Tensor t) {
  for (auto& [n, old] : items_) {
    if (n == name) {
      if (old.shape() != t.shape())
        throw ShapeError("parameter '" + name + "': shape " + shape_str(t.shape()) +
                         " does not match " + shape_str(old.shape()));
      old = std::move(t);
      return;
    }
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

ParameterSet ParameterSet::frozen() const {
  ParameterSet out;
  for (const auto& [n, t] : items_) out.items_.emplace_back(n, t.detach());
  return out;
}

ParameterSet ParameterSet::trainable() const {
  ParameterSet out;
  for (const auto& [n, t] : items_) out.items_.emplace_back(n, Tensor(t.shape(), t.to_vector(), true));
  return out;
}

void ParameterSet::zero_grad() const {
  for (const auto& [n, t] : items_) t.zero_grad();
}

bool ParameterSet::all_finite() const {
  for (const auto& [n, t] : items_)
    for (double v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (items_.size() != other.items_.size()) return false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& [na, ta] = items_[i];
    const auto& [nb, tb] = other.items_[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    auto da = ta.data();
    auto db = tb.data();
    if (!std::equal(da.begin(), da.end(), db.begin())) return false;
  }
  return true;
}

}  // namespace advlab
