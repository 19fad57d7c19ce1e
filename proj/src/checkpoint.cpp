// SPDX-License-Identifier: Apache-2.0
#include "naturalize/checkpoint.hpp"

#include <cstring>

namespace naturalize {

BinWriter::BinWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
  if (!out_) throw IoError("cannot open " + path + " for writing");
}

void BinWriter::raw(const void* p, std::size_t n) {
  out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out_) throw IoError("write failure on " + path_);
}

void BinWriter::magic(const char tag[4]) { raw(tag, 4); }
void BinWriter::u8(std::uint8_t v) { raw(&v, 1); }
void BinWriter::u32(std::uint32_t v) { raw(&v, 4); }
void BinWriter::u64(std::uint64_t v) { raw(&v, 8); }
void BinWriter::f32(float v) { raw(&v, 4); }
void BinWriter::f64(double v) { raw(&v, 8); }

void BinWriter::tensor(const Tensor<float>& t) {
  u32(static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) u32(static_cast<std::uint32_t>(d));
  raw(t.data.data(), t.data.size() * sizeof(float));
}

void BinWriter::f32_array(const std::vector<float>& v) {
  u64(v.size());
  raw(v.data(), v.size() * sizeof(float));
}

void BinWriter::f64_array(const std::vector<double>& v) {
  u64(v.size());
  raw(v.data(), v.size() * sizeof(double));
}

void BinWriter::close() {
  out_.close();
  if (!out_) throw IoError("close failure on " + path_);
}

BinReader::BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw IoError("cannot open " + path + " for reading");
}

void BinReader::raw(void* p, std::size_t n) {
  in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in_.gcount() != static_cast<std::streamsize>(n))
    throw FormatError("truncated file: " + path_);
}

void BinReader::expect_magic(const char tag[4]) {
  char got[4];
  raw(got, 4);
  if (std::memcmp(got, tag, 4) != 0)
    throw FormatError("magic bytes mismatch in " + path_ + ": expected " +
                      std::string(tag, 4) + ", got " + std::string(got, 4));
}

std::uint8_t BinReader::u8() {
  std::uint8_t v;
  raw(&v, 1);
  return v;
}
std::uint32_t BinReader::u32() {
  std::uint32_t v;
  raw(&v, 4);
  return v;
}
std::uint64_t BinReader::u64() {
  std::uint64_t v;
  raw(&v, 8);
  return v;
}
float BinReader::f32() {
  float v;
  raw(&v, 4);
  return v;
}
double BinReader::f64() {
  double v;
  raw(&v, 8);
  return v;
}

void BinReader::expect_version(std::uint32_t supported) {
  const std::uint32_t v = u32();
  if (v != supported)
    throw FormatError("unsupported format version " + std::to_string(v) + " in " + path_ +
                      " (supported: " + std::to_string(supported) + ")");
}

void BinReader::tensor_into(Tensor<float>& t) {
  const std::uint32_t ndim = u32();
  std::vector<int> shape(ndim);
  for (auto& d : shape) d = static_cast<int>(u32());
  if (shape != t.shape)
    throw FormatError("tensor shape mismatch in " + path_ + ": file has " +
                      Tensor<float>(shape).shape_str() + ", model expects " + t.shape_str());
  raw(t.data.data(), t.data.size() * sizeof(float));
}

std::vector<float> BinReader::f32_array() {
  const std::uint64_t n = u64();
  std::vector<float> v(n);
  raw(v.data(), n * sizeof(float));
  return v;
}

std::vector<double> BinReader::f64_array() {
  const std::uint64_t n = u64();
  std::vector<double> v(n);
  raw(v.data(), n * sizeof(double));
  return v;
}

void save_hnet(const HNetF& net, const std::string& path) {
  BinWriter w(path);
  w.magic("HNET");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.arch.input_size));
  w.u32(static_cast<std::uint32_t>(net.arch.channel_plan.size()));
  for (int c : net.arch.channel_plan) w.u32(static_cast<std::uint32_t>(c));
  w.u32(3);
  w.u32(static_cast<std::uint32_t>(net.arch.latent_channels));
  w.u32(static_cast<std::uint32_t>(net.arch.latent_side()));
  w.u32(static_cast<std::uint32_t>(net.arch.latent_side()));
  auto tensors = net.state_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) w.tensor(*t);
  w.close();
}

HNetF load_hnet(const std::string& path) {
  BinReader r(path);
  r.expect_magic("HNET");
  r.expect_version(kCheckpointVersion);
  ArchSpec arch;
  arch.input_size = static_cast<int>(r.u32());
  arch.channel_plan.assign(r.u32(), 0);
  for (auto& c : arch.channel_plan) c = static_cast<int>(r.u32());
  const std::uint32_t lat_rank = r.u32();
  if (lat_rank != 3) throw FormatError("latent shape in " + path + " must have rank 3");
  arch.latent_channels = static_cast<int>(r.u32());
  const int side = static_cast<int>(r.u32());
  const int side2 = static_cast<int>(r.u32());
  arch.validate();
  if (side != arch.latent_side() || side2 != arch.latent_side())
    throw FormatError("latent side in " + path + " does not match input size");
  HNetF net(arch);
  auto tensors = net.state_tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size())
    throw FormatError("tensor count mismatch in " + path + ": file has " + std::to_string(count) +
                      ", model expects " + std::to_string(tensors.size()));
  for (auto& t : tensors) r.tensor_into(*t);
  return net;
}

HNetF load_hnet(const std::string& path, int expected_input_size) {
  HNetF net = load_hnet(path);
  if (net.arch.input_size != expected_input_size)
    throw FormatError("arch mismatch: checkpoint " + path + " was trained at input size " +
                      std::to_string(net.arch.input_size) + ", run expects " +
                      std::to_string(expected_input_size));
  return net;
}

}  // namespace naturalize
