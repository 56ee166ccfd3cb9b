#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "specmix/autograd.hpp"

namespace specmix {

/// Named learnable tensors plus their optimizer state, and named non-learnable
/// buffers (normalisation running statistics). Iteration follows insertion order.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    ag::Var<T> var;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;
    std::uint64_t adam_t = 0;
  };

  ParamSet() = default;
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;
  // Copies would share leaves; use clone().
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;

  ag::Var<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.contains(name) || buffer_index_.contains(name)) throw ConfigError("duplicate parameter: " + name);
    index_[name] = entries_.size();
    const Shape shape = init.shape();
    entries_.push_back(Entry{name, ag::Var<T>::leaf(std::move(init)), Tensor<T>(shape), Tensor<T>(shape),
                             Tensor<T>(shape), 0});
    return entries_.back().var;
  }

  Tensor<T>& add_buffer(const std::string& name, Tensor<T> init) {
    if (index_.contains(name) || buffer_index_.contains(name)) throw ConfigError("duplicate buffer: " + name);
    buffer_index_[name] = buffers_.size();
    buffers_.emplace_back(name, std::move(init));
    return buffers_.back().second;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const ag::Var<T>& var(const std::string& name) const { return entry(name).var; }
  Entry& entry(const std::string& name) { return entries_[lookup(name)]; }
  const Entry& entry(const std::string& name) const { return entries_[lookup(name)]; }

  Tensor<T>& buffer(const std::string& name) { return buffers_[lookup_buffer(name)].second; }
  const Tensor<T>& buffer(const std::string& name) const { return buffers_[lookup_buffer(name)].second; }
  bool has_buffer(const std::string& name) const { return buffer_index_.contains(name); }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& buffers() { return buffers_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& buffers() const { return buffers_; }

  /// Entries whose name starts with one of the prefixes.
  std::vector<Entry*> group(const std::vector<std::string_view>& prefixes) {
    std::vector<Entry*> out;
    for (auto& e : entries_) {
      for (auto p : prefixes) {
        if (std::string_view(e.name).starts_with(p)) {
          out.push_back(&e);
          break;
        }
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }

  /// Deep copy with fresh leaves (graphs built on the source stay untouched).
  ParamSet clone() const { return cast<T>(); }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.var.value().template cast<U>());
      auto& dst = out.entry(e.name);
      dst.grad = e.grad.template cast<U>();
      dst.adam_m = e.adam_m.template cast<U>();
      dst.adam_v = e.adam_v.template cast<U>();
      dst.adam_t = e.adam_t;
    }
    for (const auto& [name, t] : buffers_) out.add_buffer(name, t.template cast<U>());
    return out;
  }

  /// Order-sensitive FNV-1a digest of the parameter values of one group.
  std::uint64_t checksum(const std::vector<std::string_view>& prefixes) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : entries_) {
      bool match = false;
      for (auto p : prefixes) match = match || std::string_view(e.name).starts_with(p);
      if (!match) continue;
      const auto* bytes = reinterpret_cast<const unsigned char*>(e.var.value().data());
      for (std::size_t i = 0; i < e.var.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  std::size_t lookup_buffer(const std::string& name) const {
    auto it = buffer_index_.find(name);
    if (it == buffer_index_.end()) throw ConfigError("unknown buffer: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, Tensor<T>>> buffers_;
  std::map<std::string, std::size_t> buffer_index_;
};

}  // namespace specmix
