// SPDX-License-Identifier: Apache-2.0
#include "mtnet/param_store.hpp"

#include <algorithm>

namespace mtn {

void ParamStore::check_new(const std::string& path) const {
  if (path.empty()) throw ConfigError("parameter path must not be empty");
  if (contains(path)) throw ConfigError("duplicate parameter path '" + path + "'");
}

Tensor ParamStore::add(const std::string& path, Tensor tensor) {
  check_new(path);
  tensor.set_requires_grad(true);
  params_.emplace(path, tensor);
  return tensor;
}

Tensor ParamStore::add_buffer(const std::string& path, Tensor tensor) {
  check_new(path);
  tensor.set_requires_grad(false);
  buffers_.emplace(path, tensor);
  return tensor;
}

bool ParamStore::contains(const std::string& path) const {
  return params_.count(path) != 0 || buffers_.count(path) != 0;
}

const Tensor& ParamStore::get(const std::string& path) const {
  if (auto it = params_.find(path); it != params_.end()) return it->second;
  if (auto it = buffers_.find(path); it != buffers_.end()) return it->second;
  throw ConfigError("unknown parameter path '" + path + "'");
}

std::size_t ParamStore::param_count() const {
  std::size_t n = 0;
  for (const auto& [path, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [path, t] : params_) t.zero_grad();
}

void ParamStore::assign_from(const ParamStore& other) {
  auto copy = [](const std::map<std::string, Tensor>& dst, const ParamStore& src) {
    for (const auto& [path, t] : dst) {
      const Tensor& s = src.get(path);
      if (s.shape() != t.shape()) {
        throw DimensionError("parameter '" + path + "' has shape " + shape_str(s.shape()) + ", expected " +
                             shape_str(t.shape()));
      }
      Tensor handle = t;
      auto out = handle.mutable_values();
      std::copy(s.values().begin(), s.values().end(), out.begin());
    }
  };
  copy(params_, other);
  copy(buffers_, other);
}

}  // namespace mtn
