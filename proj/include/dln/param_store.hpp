#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>
#include <utility>

#include "dln/tensor.hpp"

namespace dln {

template <class T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

/// Named parameters in insertion order. Entries live in a deque so a
/// Tensor pointer handed out by get() stays valid as the store grows.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Tensor<T>& add(std::string name, Tensor<T> tensor, bool trainable = true) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
    tensor.enable_grad();
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor), trainable});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) { return entry(name).tensor; }
  const Tensor<T>& get(const std::string& name) const { return entry(name).tensor; }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("no parameter named '" + name + "'");
    return entries_[it->second];
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("no parameter named '" + name + "'");
    return entries_[it->second];
  }

  void set_trainable(const std::string& name, bool trainable) { entry(name).trainable = trainable; }

  std::size_t size() const { return entries_.size(); }
  ParamEntry<T>& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry<T>& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.size();
    return n;
  }

 private:
  std::deque<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dln
