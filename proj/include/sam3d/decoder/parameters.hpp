#pragma once

#include <string>
#include <vector>

#include "sam3d/core/error.hpp"
#include "sam3d/core/tensor.hpp"

namespace sam3d {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  // false for normalization affine terms
};

/// Ordered, named collection of trainable tensors with matching gradients.
template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Shape shape, bool decay) {
    params_.push_back({std::move(name), Tensor<T>(shape), Tensor<T>(shape), decay});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  Parameter<T>& at(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw ValidationError("no parameter named '" + name + "'");
  }
  const Parameter<T>& at(const std::string& name) const { return const_cast<ParameterSet*>(this)->at(name); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) {
      const std::size_t i = out.add(p.name, p.value.shape(), p.decay);
      out[i].value = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace sam3d
