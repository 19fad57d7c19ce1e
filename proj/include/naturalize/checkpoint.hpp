// SPDX-License-Identifier: Apache-2.0
//
// Binary container shared by all on-disk artifacts: 4 magic bytes, a u32
// format version, then format-specific fields. Tensors are stored as a u32
// rank, u32 dims, and little-endian float32 payload.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "naturalize/errors.hpp"
#include "naturalize/hnet.hpp"
#include "naturalize/tensor.hpp"

namespace naturalize {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class BinWriter {
 public:
  explicit BinWriter(const std::string& path);
  void magic(const char tag[4]);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void tensor(const Tensor<float>& t);
  void f32_array(const std::vector<float>& v);
  void f64_array(const std::vector<double>& v);
  void close();

 private:
  std::ofstream out_;
  std::string path_;
  void raw(const void* p, std::size_t n);
};

class BinReader {
 public:
  explicit BinReader(const std::string& path);
  void expect_magic(const char tag[4]);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void tensor_into(Tensor<float>& t);  // shape must match the stored header
  std::vector<float> f32_array();
  std::vector<double> f64_array();
  // version gate shared by every format
  void expect_version(std::uint32_t supported);

 private:
  std::ifstream in_;
  std::string path_;
  void raw(void* p, std::size_t n);
};

// H-Net checkpoint: magic "HNET", version, ArchSpec as length-prefixed
// fields, then every state tensor in declaration order.
void save_hnet(const HNetF& net, const std::string& path);
HNetF load_hnet(const std::string& path);
// Throws FormatError when the stored arch input size differs from expected.
HNetF load_hnet(const std::string& path, int expected_input_size);

}  // namespace naturalize
