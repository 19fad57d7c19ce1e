// SPDX-License-Identifier: Apache-2.0
#include "naturalize/losses.hpp"

#include "naturalize/checkpoint.hpp"

namespace naturalize {

void save_perceptual(const PerceptualNetF& net, const std::string& path) {
  BinWriter w(path);
  w.magic("PNET");
  w.u32(kCheckpointVersion);
  auto tensors = net.weight_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) w.tensor(*t);
  w.close();
}

PerceptualNetF load_perceptual(const std::string& path) {
  BinReader r(path);
  r.expect_magic("PNET");
  r.expect_version(kCheckpointVersion);
  PerceptualNetF net;
  auto tensors = net.weight_tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size())
    throw FormatError("perceptual weight file " + path + " holds " + std::to_string(count) +
                      " tensors, expected " + std::to_string(tensors.size()));
  for (auto& t : tensors) r.tensor_into(*t);
  return net;
}

}  // namespace naturalize
