// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mtnet/param_store.hpp"
#include "mtnet/tensor.hpp"

namespace mtn {

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view bytes);
std::string read_file(const std::string& path);

// ---- MTN1 tensor records ---------------------------------------------------
// "MTN1", u32 rank, rank x u32 dims, then numel x f64 values, all little-endian.

std::string encode_tensor(const Tensor& tensor);
/// Decodes the record starting at `offset` and advances it past the record.
Tensor decode_tensor(std::string_view bytes, std::size_t& offset);

void save_tensor(const std::string& path, const Tensor& tensor);
Tensor load_tensor(const std::string& path);

// ---- checkpoints -------------------------------------------------------------
// "MTN1CKPT", u64 index length, JSON index, then one MTN1 record per tensor.
// The index lists {"path", "kind" (param|buffer), "offset", "shape"} per
// tensor, offsets counted from the first record, plus a free-form "meta" object.

struct Checkpoint {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;
  nlohmann::json meta = nlohmann::json::object();
};

std::string encode_checkpoint(const ParamStore& store, const nlohmann::json& meta = nlohmann::json::object());
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

/// Copies every tensor into `store`; the path sets and shapes must agree exactly.
void load_into(ParamStore& store, const Checkpoint& checkpoint);

}  // namespace mtn
