#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hdm/autograd.hpp"

namespace hdm {

template <typename T>
struct NamedTensor {
  std::string name;
  ag::Mat<T> value;
};

// Ordered collection of named parameter matrices. Order is creation order
// and is what checkpoints and optimizers iterate over.
template <typename T>
class ParamSet {
 public:
  // A shape-only set records names and shapes but allocates no storage.
  explicit ParamSet(bool allocate = true) : allocate_(allocate) {}

  int add(std::string name, ag::Index rows, ag::Index cols) {
    require(!index_.contains(name), ErrorKind::kInvariant, "duplicate parameter " + name);
    const int id = static_cast<int>(tensors_.size());
    index_.emplace(name, id);
    tensors_.push_back({std::move(name), allocate_ ? ag::Mat<T>::Zero(rows, cols) : ag::Mat<T>()});
    shapes_.emplace_back(rows, cols);
    return id;
  }

  bool allocated() const { return allocate_; }
  std::pair<ag::Index, ag::Index> shape(std::size_t i) const { return shapes_[i]; }

  int index_of(std::string_view name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::kInvariant, "unknown parameter " + std::string(name));
    return it->second;
  }
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  std::size_t size() const { return tensors_.size(); }
  NamedTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& [r, c] : shapes_) n += r * c;
    return n;
  }

  std::vector<ag::Var<T>> bind(ag::Tape<T>& tape, bool trainable) const {
    std::vector<ag::Var<T>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) out.push_back(trainable ? tape.leaf(t.value) : tape.constant(t.value));
    return out;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors_) {
      const int id = out.add(t.name, t.value.rows(), t.value.cols());
      out[static_cast<std::size_t>(id)].value = t.value.template cast<U>();
    }
    return out;
  }

 private:
  bool allocate_ = true;
  std::vector<NamedTensor<T>> tensors_;
  std::vector<std::pair<ag::Index, ag::Index>> shapes_;
  std::map<std::string, int, std::less<>> index_;
};

// Gradient buffers aligned with a ParamSet.
template <typename T>
using GradSet = std::vector<ag::Mat<T>>;

template <typename T>
GradSet<T> zero_grads(const ParamSet<T>& params) {
  GradSet<T> out;
  out.reserve(params.size());
  for (const auto& t : params) out.push_back(ag::Mat<T>::Zero(t.value.rows(), t.value.cols()));
  return out;
}

// Adds the gradients reached on bound leaves into grads, scaled by weight.
template <typename T>
void accumulate_grads(GradSet<T>& grads, const std::vector<ag::Var<T>>& bound, T weight = T(1)) {
  require(grads.size() == bound.size(), ErrorKind::kInvariant, "gradient buffer does not match bound parameters");
  for (std::size_t i = 0; i < bound.size(); ++i) {
    if (bound[i].grad().size() != 0) grads[i] += weight * bound[i].grad();
  }
}

}  // namespace hdm
