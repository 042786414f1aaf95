#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "a3net/autodiff.hpp"
#include "a3net/error.hpp"
#include "a3net/tensor.hpp"

namespace a3net {

// Named trainable tensors in a fixed insertion order. The order is the
// checkpoint order and the order of gradient vectors.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  Tensor& add(std::string name, Tensor value) {
    if (index_.count(name)) throw Error("params: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("params: unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& operator[](const std::string& name) { return entries_[index(name)].value; }
  const Tensor& operator[](const std::string& name) const { return entries_[index(name)].value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  bool operator==(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name || !(entries_[i].value == other.entries_[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Leaf nodes of every parameter on one graph, looked up by name.
class ParamVars {
 public:
  ParamVars(Graph& graph, const ParamStore& store) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& e : store.entries()) vars_.push_back(graph.leaf(e.value));
  }

  Var operator[](const std::string& name) const { return vars_[store_->index(name)]; }
  bool contains(const std::string& name) const { return store_->contains(name); }
  const std::vector<Var>& all() const { return vars_; }

  // Parameter gradients in store order.
  std::vector<Tensor> gradients(const Gradients& grads) const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (Var v : vars_) out.push_back(grads.wrt(v));
    return out;
  }

 private:
  const ParamStore* store_;
  std::vector<Var> vars_;
};

}  // namespace a3net
