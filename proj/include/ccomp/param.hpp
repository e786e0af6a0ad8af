#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccomp/common.hpp"

namespace ccomp {

enum class Group : uint8_t { kEnc = 0, kDec = 1, kPz = 2 };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::kEnc: return "enc";
    case Group::kDec: return "dec";
    default: return "pz";
  }
}

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  std::string name;
  Group group = Group::kEnc;
  bool trainable = true;

  Parameter(std::string n, Group g, Tensor<T> v)
      : value(std::move(v)), grad(value.dims), name(std::move(n)), group(g) {}
};

// Owns all parameters of a model in registration order (which fixes the
// checkpoint layout and every deterministic iteration order).
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, Group g, Tensor<T> v) {
    if (index_.count(name))
      throw ContractError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter<T>>(name, g, std::move(v)));
    index_[params_.back()->name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  size_t count() const { return params_.size(); }
  Parameter<T>& operator[](size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](size_t i) const { return *params_[i]; }

  int64_t total_values() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }
  int64_t group_values(Group g) const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (p->group == g) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->grad.fill(T(0));
  }

  void set_trainable_groups(bool enc, bool dec, bool pz) {
    for (auto& p : params_) {
      switch (p->group) {
        case Group::kEnc: p->trainable = enc; break;
        case Group::kDec: p->trainable = dec; break;
        case Group::kPz: p->trainable = pz; break;
      }
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// CCKPT1 checkpoint format (little-endian):
//   "CCKPT1" | u32 header text length | header text (key=value lines)
//   | u32 param count | per param: u16 name length, name, group u8, rank u8,
//   u32 dims..., raw f32 payload | CRC32 of all preceding bytes.
std::vector<uint8_t> serialize_checkpoint(const ParamStore<float>& ps, const std::string& header);

struct LoadedCheckpoint {
  std::string header;
  std::vector<std::tuple<std::string, Group, Shape, std::vector<float>>> params;
};
LoadedCheckpoint parse_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::string& path, const ParamStore<float>& ps,
                     const std::string& header);

}  // namespace ccomp
