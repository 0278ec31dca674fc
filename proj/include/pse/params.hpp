#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pse/error.hpp"
#include "pse/rng.hpp"
#include "pse/tensor.hpp"

namespace pse {

/// Ordered, name-addressed collection of trainable arrays. Order is the
/// insertion order and defines the serialization and optimizer-slot layout.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<T> value;
  };

  std::size_t add(std::string name, Shape shape, std::vector<T> value) {
    if (index_.count(name))
      throw invalid_argument_error("param already registered: " + name);
    if (value.size() != shape_numel(shape))
      throw shape_error("param " + name + ": value size does not match shape");
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(shape), std::move(value)});
    return entries_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw invalid_argument_error("unknown param: " + name);
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw invalid_argument_error("unknown param: " + name);
    return entries_[it->second];
  }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw invalid_argument_error("unknown param: " + name);
    return it->second;
  }

  Entry& entry(std::size_t i) { return entries_.at(i); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-parameter gradient accumulator, slot-parallel to a ParamStore.
template <class T>
struct GradAccumulator {
  std::vector<std::vector<T>> sums;

  explicit GradAccumulator(const ParamStore<T>& store) {
    sums.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
      sums.emplace_back(store.entry(i).value.size(), T(0));
  }

  void accumulate(const std::vector<std::vector<T>>& grads) {
    if (grads.size() != sums.size())
      throw invalid_argument_error("gradient slot count mismatch");
    for (std::size_t i = 0; i < sums.size(); ++i) {
      if (grads[i].size() != sums[i].size())
        throw shape_error("gradient size mismatch at slot " + std::to_string(i));
      for (std::size_t j = 0; j < sums[i].size(); ++j) sums[i][j] += grads[i][j];
    }
  }

  void scale(T factor) {
    for (auto& s : sums)
      for (T& v : s) v *= factor;
  }
};

/// Adam moment buffers plus step counter, slot-parallel to a ParamStore.
template <class T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;

  explicit AdamState(const ParamStore<T>& store) {
    m.reserve(store.size());
    v.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      m.emplace_back(store.entry(i).value.size(), T(0));
      v.emplace_back(store.entry(i).value.size(), T(0));
    }
  }
};

/// One Adam update with bias correction; moment arithmetic in double.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& state,
               const std::vector<std::vector<T>>& grads, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw invalid_argument_error("adam_step: slot count mismatch");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params.entry(i).value;
    if (grads[i].size() != value.size())
      throw shape_error("adam_step: gradient size mismatch at slot " + std::to_string(i));
    auto& mi = state.m[i];
    auto& vi = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double gj = static_cast<double>(grads[i][j]);
      const double mj = b1 * static_cast<double>(mi[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(vi[j]) + (1.0 - b2) * gj * gj;
      mi[j] = static_cast<T>(mj);
      vi[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      value[j] = static_cast<T>(static_cast<double>(value[j]) -
                                lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

/// Lazily mirrors store entries as differentiable leaves of one graph, then
/// collects their gradients back in slot order (zeros for unused params).
template <class T>
class ParamBinding {
 public:
  ParamBinding(ParamStore<T>& store, Graph<T>& graph)
      : store_(&store), graph_(&graph), leaf_ids_(store.size(), -1) {}

  Tensor<T> use(const std::string& name) {
    const std::size_t slot = store_->index_of(name);
    if (leaf_ids_[slot] < 0) {
      const auto& e = store_->entry(slot);
      Tensor<T> t = graph_->leaf(e.shape, e.value, true);
      leaf_ids_[slot] = t.id;
    }
    return {graph_, leaf_ids_[slot]};
  }

  /// Gradients per slot after graph->backward(); call once per graph.
  std::vector<std::vector<T>> grads() const {
    std::vector<std::vector<T>> out;
    out.reserve(store_->size());
    for (std::size_t i = 0; i < store_->size(); ++i) {
      if (leaf_ids_[i] >= 0) {
        Tensor<T> t{graph_, leaf_ids_[i]};
        out.push_back(t.grad());
      } else {
        out.emplace_back(store_->entry(i).value.size(), T(0));
      }
    }
    return out;
  }

 private:
  ParamStore<T>* store_;
  Graph<T>* graph_;
  std::vector<int> leaf_ids_;
};

/// He-style initialization for a dense layer mapping fan_in -> fan_out:
/// weights ~ N(0, sqrt(2 / fan_in)), biases zero.
template <class T>
void init_dense(ParamStore<T>& store, const std::string& prefix, std::size_t fan_in,
                std::size_t fan_out, Rng& rng, bool zero_weights = false) {
  std::vector<T> w(fan_in * fan_out, T(0));
  if (!zero_weights) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (T& x : w) x = static_cast<T>(rng.gaussian() * stddev);
  }
  store.add(prefix + ".w", Shape{fan_in, fan_out}, std::move(w));
  store.add(prefix + ".b", Shape{1, fan_out}, std::vector<T>(fan_out, T(0)));
}

}  // namespace pse
