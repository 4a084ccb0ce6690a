// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <set>

#include <unistd.h>

#include "mtnet/checkpoint.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/network.hpp"
#include "oracles.hpp"

using namespace mtn;

namespace {

namespace fs = std::filesystem;

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

NetworkConfig small() {
  NetworkConfig c;
  c.in_channels = 1;
  c.clip = {4, 4, 4};
  c.stem.out_channels = 4;
  BlockConfig b;
  b.in_channels = 4;
  b.out_channels = 6;
  b.delta = 0.5;
  c.stages = {b};
  c.classes = 3;
  return c;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mtnet_ckpt_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

using CheckpointIo = TempDir;

TEST_F(CheckpointIo, TensorRecordRoundTrip) {
  oracle::Gen gen(1);
  Tensor t = gen.tensor({2, 3, 1, 4}, -1e6, 1e6);
  t.mutable_values()[0] = -0.0;
  t.mutable_values()[1] = 5e-324;
  save_tensor(path("t.mtn1"), t);
  const Tensor back = load_tensor(path("t.mtn1"));
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.values().data(), t.values().data(), t.numel() * sizeof(double)), 0);
  EXPECT_FALSE(fs::exists(path("t.mtn1.tmp")));
}

TEST_F(CheckpointIo, TensorRecordLayout) {
  const std::string bytes = encode_tensor(Tensor({2}, {1.0, -2.0}));
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 16);
  EXPECT_EQ(bytes.substr(0, 4), "MTN1");
  std::uint32_t rank = 0, dim = 0;
  double second = 0.0;
  std::memcpy(&rank, bytes.data() + 4, 4);
  std::memcpy(&dim, bytes.data() + 8, 4);
  std::memcpy(&second, bytes.data() + 20, 8);
  EXPECT_EQ(rank, 1u);
  EXPECT_EQ(dim, 2u);
  EXPECT_EQ(second, -2.0);
}

TEST_F(CheckpointIo, NetworkRoundTripIsBitExact) {
  Network a(small(), 1);
  // make the buffers non-trivial
  oracle::Gen gen(2);
  ForwardContext train{true, nullptr, nullptr};
  a.forward(gen.tensor({1, 4, 4, 4}), train);
  save_checkpoint(path("net.ckpt"), a.params(), {{"note", "x"}});
  const Checkpoint ck = load_checkpoint(path("net.ckpt"));
  EXPECT_EQ(ck.meta.at("note"), "x");
  Network b(small(), 99);
  load_into(b.params(), ck);
  for (const auto* pair : {&a.params().params(), &a.params().buffers()})
    for (const auto& [p, t] : *pair) {
      const Tensor& other = b.params().params().count(p) ? b.params().get(p) : b.params().buffers().at(p);
      EXPECT_EQ(std::memcmp(t.values().data(), other.values().data(), t.numel() * sizeof(double)), 0) << p;
    }
  const Tensor clip = gen.tensor({1, 4, 4, 4});
  EXPECT_EQ(vec(a.forward(clip)), vec(b.forward(clip)));
}

TEST_F(CheckpointIo, IndexListsExactlyTheStorePaths) {
  Network net(small(), 3);
  const std::string bytes = encode_checkpoint(net.params());
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  const auto index = nlohmann::json::parse(bytes.substr(16, len));
  EXPECT_EQ(index.at("format"), "mtnet-checkpoint");
  std::set<std::string> params, buffers;
  for (const auto& e : index.at("tensors")) (e.at("kind") == "param" ? params : buffers).insert(e.at("path").get<std::string>());
  std::set<std::string> expect_params, expect_buffers;
  for (const auto& [p, t] : net.params().params()) expect_params.insert(p);
  for (const auto& [p, t] : net.params().buffers()) expect_buffers.insert(p);
  EXPECT_EQ(params, expect_params);
  EXPECT_EQ(buffers, expect_buffers);
}

TEST_F(CheckpointIo, TruncationNamesTheByteOffset) {
  Network net(small(), 4);
  const std::string bytes = encode_checkpoint(net.params());
  write_file_atomic(path("cut.ckpt"), std::string_view(bytes).substr(0, bytes.size() - 5));
  try {
    load_checkpoint(path("cut.ckpt"));
    FAIL();
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte " + std::to_string(bytes.size() - 5)), std::string::npos) << msg;
  }
  write_file_atomic(path("head.ckpt"), std::string_view(bytes).substr(0, 12));
  EXPECT_THROW(load_checkpoint(path("head.ckpt")), IoError);
}

TEST_F(CheckpointIo, CorruptInputsAreIoErrors) {
  write_file_atomic(path("junk.ckpt"), "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(path("junk.ckpt")), IoError);
  EXPECT_THROW(load_checkpoint(path("missing.ckpt")), IoError);
  EXPECT_THROW(load_tensor(path("missing.mtn1")), IoError);
  write_file_atomic(path("trail.mtn1"), encode_tensor(Tensor({1}, {1.0})) + "x");
  EXPECT_THROW(load_tensor(path("trail.mtn1")), IoError);
}

TEST_F(CheckpointIo, LoadIntoRejectsMismatchedModels) {
  Network a(small(), 5);
  NetworkConfig other = small();
  other.classes = 4;
  Network b(other, 5);
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(a.params()));
  EXPECT_THROW(load_into(b.params(), ck), ConfigError);
}

TEST_F(CheckpointIo, WriteIntoMissingDirectoryFails) {
  EXPECT_THROW(write_file_atomic(path("no/such/dir/file"), "x"), IoError);
}
