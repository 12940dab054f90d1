#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmt/errors.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool frozen = true;
};

// Named parameters in registration order. Every iteration anywhere in the
// library walks the same order, which is what makes checkpoints and training
// runs bit-reproducible.
class ParameterRegistry {
 public:
  Tensor& add(const std::string& name, Tensor t, bool frozen = true) {
    if (index_.count(name))
      throw ValidationError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t), frozen});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ValidationError("unknown parameter name: " + name);
    return entries_[it->second].tensor;
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ValidationError("unknown parameter name: " + name);
    return entries_[it->second].tensor;
  }

  bool is_frozen(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ValidationError("unknown parameter name: " + name);
    return entries_[it->second].frozen;
  }

  void set_frozen(const std::string& name, bool frozen) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ValidationError("unknown parameter name: " + name);
    entries_[it->second].frozen = frozen;
    entries_[it->second].tensor.set_requires_grad(!frozen);
  }

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  std::size_t size() const { return entries_.size(); }

  std::int64_t value_count(bool frozen) const {
    std::int64_t n = 0;
    for (const ParamEntry& e : entries_)
      if (e.frozen == frozen) n += e.tensor.size();
    return n;
  }

  std::int64_t trainable_value_count() const { return value_count(false); }
  std::int64_t frozen_value_count() const { return value_count(true); }

  void zero_grads() {
    for (ParamEntry& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Which parameters train. The backbone-frozen default matches the setup the
// names encode: only adapter and visual-projection weights move.
enum class FreezePolicy {
  kFrozenWithAdapters,
  kFullyUnfrozenNoAdapters,
  kTextOnlyNoVisual,
};

inline FreezePolicy parse_freeze_policy(const std::string& name) {
  if (name == "frozen-with-adapters") return FreezePolicy::kFrozenWithAdapters;
  if (name == "fully-unfrozen-no-adapters")
    return FreezePolicy::kFullyUnfrozenNoAdapters;
  if (name == "text-only-no-visual") return FreezePolicy::kTextOnlyNoVisual;
  throw ValidationError("unknown freeze policy: " + name);
}

inline std::string freeze_policy_name(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::kFrozenWithAdapters:
      return "frozen-with-adapters";
    case FreezePolicy::kFullyUnfrozenNoAdapters:
      return "fully-unfrozen-no-adapters";
    case FreezePolicy::kTextOnlyNoVisual:
      return "text-only-no-visual";
  }
  throw ValidationError("invalid freeze policy value");
}

inline bool is_adapter_param(const std::string& name) {
  return name.find(".adapter") != std::string::npos;
}

inline bool is_visual_param(const std::string& name) {
  return name.rfind("visual.", 0) == 0;
}

// Sets the frozen flag of every entry according to the policy and marks
// trainable tensors to require gradients.
inline void partition_parameters(ParameterRegistry& reg, FreezePolicy policy) {
  for (ParamEntry& e : reg.entries()) {
    bool trainable = false;
    switch (policy) {
      case FreezePolicy::kFrozenWithAdapters:
        trainable = is_adapter_param(e.name) || is_visual_param(e.name);
        break;
      case FreezePolicy::kFullyUnfrozenNoAdapters:
        trainable = true;
        break;
      case FreezePolicy::kTextOnlyNoVisual:
        trainable = is_adapter_param(e.name);
        break;
    }
    e.frozen = !trainable;
    e.tensor.set_requires_grad(trainable);
  }
}

}  // namespace mmt
