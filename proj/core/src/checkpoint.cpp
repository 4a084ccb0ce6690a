// SPDX-License-Identifier: Apache-2.0
#include "mtnet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "mtnet/errors.hpp"

namespace mtn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kTensorMagic = "MTN1";
constexpr std::string_view kCheckpointMagic = "MTN1CKPT";

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void need(std::string_view bytes, std::size_t offset, std::size_t count, const std::string& what) {
  if (offset > bytes.size() || bytes.size() - offset < count) {
    throw IoError("truncated data: " + what + " needs bytes [" + std::to_string(offset) + ", " +
                  std::to_string(offset + count) + ") but the data ends at byte " + std::to_string(bytes.size()));
  }
}

template <class T>
T get(std::string_view bytes, std::size_t& offset, const std::string& what) {
  need(bytes, offset, sizeof(T), what);
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

}  // namespace

void write_file_atomic(const std::string& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename temp file onto '" + path + "'");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read of '" + path + "' failed");
  return bytes;
}

std::string encode_tensor(const Tensor& tensor) {
  std::string out(kTensorMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : tensor.values()) put<double>(out, v);
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::size_t& offset) {
  const std::string at = "tensor record at byte " + std::to_string(offset);
  need(bytes, offset, kTensorMagic.size(), at);
  if (bytes.substr(offset, kTensorMagic.size()) != kTensorMagic) throw IoError(at + ": bad magic");
  offset += kTensorMagic.size();
  const auto rank = get<std::uint32_t>(bytes, offset, at);
  if (rank > 8) throw IoError(at + ": implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get<std::uint32_t>(bytes, offset, at));
  const std::size_t n = shape_numel(shape);
  need(bytes, offset, n * sizeof(double), at);
  std::vector<double> values(n);
  std::memcpy(values.data(), bytes.data() + offset, n * sizeof(double));
  offset += n * sizeof(double);
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& tensor) { write_file_atomic(path, encode_tensor(tensor)); }

Tensor load_tensor(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) throw IoError("'" + path + "' has trailing bytes after offset " + std::to_string(offset));
  return t;
}

std::string encode_checkpoint(const ParamStore& store, const nlohmann::json& meta) {
  nlohmann::json entries = nlohmann::json::array();
  std::string data;
  const auto emit = [&](const std::map<std::string, Tensor>& tensors, const char* kind) {
    for (const auto& [path, t] : tensors) {
      entries.push_back({{"path", path}, {"kind", kind}, {"offset", data.size()}, {"shape", t.shape()}});
      data += encode_tensor(t);
    }
  };
  emit(store.params(), "param");
  emit(store.buffers(), "buffer");
  const nlohmann::json index = {{"format", "mtnet-checkpoint"}, {"version", 1}, {"tensors", entries}, {"meta", meta}};
  const std::string text = index.dump();
  std::string out(kCheckpointMagic);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += data;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  std::size_t offset = 0;
  need(bytes, 0, kCheckpointMagic.size(), "checkpoint header");
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw IoError("not an MTN1 checkpoint (bad magic)");
  offset = kCheckpointMagic.size();
  const auto len = get<std::uint64_t>(bytes, offset, "checkpoint index length");
  need(bytes, offset, len, "checkpoint index");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(bytes.substr(offset, len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint index is not valid JSON: ") + e.what());
  }
  const std::size_t base = offset + len;
  Checkpoint ck;
  try {
    ck.meta = index.value("meta", nlohmann::json::object());
    for (const auto& e : index.at("tensors")) {
      const std::string path = e.at("path").get<std::string>();
      std::size_t at = base + e.at("offset").get<std::size_t>();
      Tensor t = decode_tensor(bytes, at);
      if (t.shape() != e.at("shape").get<Shape>()) throw IoError("tensor '" + path + "' disagrees with its index shape");
      auto& dest = e.at("kind").get<std::string>() == "buffer" ? ck.buffers : ck.params;
      if (!dest.emplace(path, std::move(t)).second) throw IoError("duplicate tensor path '" + path + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint index: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::string& path, const ParamStore& store, const nlohmann::json& meta) {
  write_file_atomic(path, encode_checkpoint(store, meta));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const IoError& e) {
    throw IoError("'" + path + "': " + e.what());
  }
}

void load_into(ParamStore& store, const Checkpoint& checkpoint) {
  const auto copy = [](const std::map<std::string, Tensor>& dst, const std::map<std::string, Tensor>& src,
                       const char* kind) {
    if (dst.size() != src.size()) {
      throw ConfigError(std::string("checkpoint has ") + std::to_string(src.size()) + " " + kind + " tensors, model has " +
                        std::to_string(dst.size()));
    }
    for (const auto& [path, t] : dst) {
      const auto it = src.find(path);
      if (it == src.end()) throw ConfigError(std::string("checkpoint lacks ") + kind + " '" + path + "'");
      if (it->second.shape() != t.shape()) throw ConfigError("checkpoint shape mismatch for '" + path + "'");
      Tensor handle = t;
      auto dstv = handle.mutable_values();
      const auto srcv = it->second.values();
      std::copy(srcv.begin(), srcv.end(), dstv.begin());
    }
  };
  copy(store.params(), checkpoint.params, "param");
  copy(store.buffers(), checkpoint.buffers, "buffer");
}

}  // namespace mtn
