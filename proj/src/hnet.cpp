// SPDX-License-Identifier: Apache-2.0
#include "naturalize/hnet.hpp"

namespace naturalize {

HNetF init_hnet(const ArchSpec& arch, std::uint64_t seed) {
  HNetF net(arch);
  net.init(seed);
  return net;
}

}  // namespace naturalize
