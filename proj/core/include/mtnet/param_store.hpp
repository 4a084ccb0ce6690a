// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "mtnet/tensor.hpp"

namespace mtn {

/// Named trainable tensors plus non-trainable buffers (batch-norm running
/// statistics). Paths are dot-separated and unique across both maps. Stored
/// tensors alias the ones held by layers, so in-place updates are shared.
class ParamStore {
 public:
  /// Registers a parameter; forces requires_grad on.
  Tensor add(const std::string& path, Tensor tensor);
  Tensor add_buffer(const std::string& path, Tensor tensor);

  bool contains(const std::string& path) const;
  const Tensor& get(const std::string& path) const;

  const std::map<std::string, Tensor>& params() const { return params_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  /// Total element count of the parameters (buffers excluded).
  std::size_t param_count() const;
  void zero_grad();

  /// Copies values from `other` for every path; shapes must agree.
  void assign_from(const ParamStore& other);

 private:
  void check_new(const std::string& path) const;

  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
};

}  // namespace mtn
