#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdmg/errors.hpp"
#include "sdmg/tensor.hpp"

namespace sdmg {

/// Ordered collection of named trainable tensors.
/// kFanIn: U(±1/√fan_in). kHe: U(±√(6/fan_in)), for weights feeding a ReLU.
/// kZero: stays zero.
enum class Init { kFanIn, kHe, kZero };

template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    std::size_t fan_in = 1;
    Init init = Init::kFanIn;
  };

  /// Registers a zero-filled trainable tensor. `fan_in` sets its init bound.
  Tensor<T> add(const std::string& name, Shape shape, std::size_t fan_in, Init init = Init::kFanIn) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Tensor<T>(std::move(shape), true), fan_in == 0 ? 1 : fan_in, init});
    return entries_.back().tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter " + name);
    return entries_[it->second].tensor;
  }

  /// Total number of scalars.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  /// Draws every entry from its init rule, in registration order.
  void init_uniform(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& e : entries_) {
      const double fan = static_cast<double>(e.fan_in);
      if (e.init == Init::kZero) {
        for (auto& x : e.tensor.mutable_data()) x = T(0);
        continue;
      }
      const double bound = e.init == Init::kHe ? std::sqrt(6.0 / fan) : 1.0 / std::sqrt(fan);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& x : e.tensor.mutable_data()) x = static_cast<T>(dist(rng));
    }
  }

  void fill(T value) {
    for (auto& e : entries_)
      for (auto& x : e.tensor.mutable_data()) x = value;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sdmg
