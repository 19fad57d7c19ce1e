// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "naturalize/checkpoint.hpp"
#include "naturalize/hnet.hpp"
#include "naturalize/image_io.hpp"
#include "naturalize/rng.hpp"

using namespace naturalize;
namespace fs = std::filesystem;

namespace {

TensorPtrF random_input(int n, int s, std::uint64_t seed) {
  RandomStream rng(seed);
  auto t = make_tensor<float>({n, 3, s, s});
  for (auto& v : t->data) v = static_cast<float>(rng.normal(0.0, 1.0));
  return t;
}

// zeroes the residual branch of every bottleneck block
void configure_identity(Transformer<float>& t) {
  for (auto& blk : t.blocks) {
    std::fill(blk.expand.w->data.begin(), blk.expand.w->data.end(), 0.0f);
    std::fill(blk.expand.b->data.begin(), blk.expand.b->data.end(), 0.0f);
    std::fill(blk.bn_expand.beta->data.begin(), blk.bn_expand.beta->data.end(), 0.0f);
  }
}

std::uint64_t state_hash(const std::vector<TensorPtrF>& ts) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : ts) h = fnv1a64(t->data.data(), t->data.size() * sizeof(float), h);
  return h;
}

}  // namespace

TEST_CASE("encoder shape plan: S=64 gives a (128,8,8) latent") {
  ArchSpec arch;
  HNetF net = init_hnet(arch, 1);
  auto latent = net.enc_natural.forward(nullptr, random_input(2, 64, 3), BnMode::Eval);
  CHECK(latent->shape == std::vector<int>{2, 128, 8, 8});
}

TEST_CASE("encoder shape plan: S=256 gives a (128,32,32) latent") {
  ArchSpec arch;
  arch.input_size = 256;
  HNetF net = init_hnet(arch, 1);
  auto latent = net.enc_natural.forward(nullptr, random_input(1, 256, 4), BnMode::Eval);
  CHECK(latent->shape == std::vector<int>{1, 128, 32, 32});
}

TEST_CASE("eval-mode encoding is bit-identical across calls") {
  HNetF net = init_hnet(ArchSpec{}, 5);
  auto x = random_input(1, 64, 7);
  auto a = net.enc_natural.forward(nullptr, x, BnMode::Eval);
  auto b = net.enc_natural.forward(nullptr, x, BnMode::Eval);
  for (std::size_t i = 0; i < a->numel(); ++i) CHECK(a->data[i] == b->data[i]);
}

TEST_CASE("decoder maps latent (128,8,8) to image (3,64,64)") {
  HNetF net = init_hnet(ArchSpec{}, 2);
  RandomStream rng(9);
  auto latent = make_tensor<float>({1, 128, 8, 8});
  for (auto& v : latent->data) v = static_cast<float>(rng.normal());
  auto img = net.dec_natural.forward(nullptr, latent, BnMode::Eval);
  CHECK(img->shape == std::vector<int>{1, 3, 64, 64});
}

TEST_CASE("decoder output is linear and unbounded pre-clamp") {
  HNetF net = init_hnet(ArchSpec{}, 2);
  std::fill(net.dec_natural.conv4.b->data.begin(), net.dec_natural.conv4.b->data.end(), 7.5f);
  RandomStream rng(10);
  auto latent = make_tensor<float>({1, 128, 8, 8});
  for (auto& v : latent->data) v = static_cast<float>(rng.normal());
  auto img = net.dec_natural.forward(nullptr, latent, BnMode::Eval);
  float peak = 0.0f;
  for (float v : img->data) peak = std::max(peak, std::abs(v));
  CHECK(peak > 1.0f);  // no squashing nonlinearity on the output
}

TEST_CASE("transformer with zeroed residual branches is the identity") {
  HNetF net = init_hnet(ArchSpec{}, 3);
  configure_identity(net.transformer);
  RandomStream rng(11);
  auto latent = make_tensor<float>({2, 128, 4, 4});
  for (auto& v : latent->data) v = static_cast<float>(rng.normal());
  for (auto mode : {BnMode::Eval, BnMode::Train}) {
    auto out = net.transformer.forward(nullptr, latent, mode);
    REQUIRE(out->shape == latent->shape);
    for (std::size_t i = 0; i < latent->numel(); ++i) CHECK(out->data[i] == latent->data[i]);
  }
}

TEST_CASE("transformer preserves shape for any valid latent side") {
  HNetF net = init_hnet(ArchSpec{}, 4);
  for (int s : {2, 4, 8}) {
    auto latent = make_tensor<float>({1, 128, s, s});
    auto out = net.transformer.forward(nullptr, latent, BnMode::Eval);
    CHECK(out->shape == latent->shape);
  }
  auto bad = make_tensor<float>({1, 64, 4, 4});
  CHECK_THROWS_AS(net.transformer.forward(nullptr, bad, BnMode::Eval), DimensionError);
}

TEST_CASE("gradient reaches every transformer block") {
  HNetF net = init_hnet(ArchSpec{}, 6);
  RandomStream rng(12);
  auto latent = make_tensor<float>({2, 128, 4, 4});
  for (auto& v : latent->data) v = static_cast<float>(rng.normal());
  TapeF tape;
  auto out = net.transformer.forward(&tape, latent, BnMode::Train);
  auto target = make_tensor<float>(out->shape);
  for (auto& v : target->data) v = static_cast<float>(rng.normal());
  auto loss = mse_loss<float>(&tape, out, target);
  backward(tape, loss);
  int block_idx = 0;
  for (const auto& blk : net.transformer.blocks) {
    double acc = 0.0;
    for (const auto& t : {blk.reduce.w, blk.mid.w, blk.expand.w})
      for (float g : t->grad) acc += std::abs(g);
    INFO("block ", block_idx);
    CHECK(acc > 0.0);
    ++block_idx;
  }
}

TEST_CASE("transform path: identity transformer + shared decoder equals CG reconstruction") {
  HNetF net = init_hnet(ArchSpec{}, 7);
  configure_identity(net.transformer);
  // copy dec_cg weights into dec_natural
  auto src = net.group_state(ParamGroup::DecCg);
  auto dst = net.group_state(ParamGroup::DecNatural);
  REQUIRE(src.size() == dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->data = src[i]->data;

  auto x = random_input(1, 64, 13);
  auto path = net.forward_transform(nullptr, x, BnMode::Eval);
  auto recon = net.dec_cg.forward(nullptr, net.enc_cg.forward(nullptr, x, BnMode::Eval), BnMode::Eval);
  REQUIRE(path->shape == recon->shape);
  for (std::size_t i = 0; i < path->numel(); ++i) CHECK(path->data[i] == recon->data[i]);
}

TEST_CASE("transform path differs from the natural autoencoder path") {
  HNetF net = init_hnet(ArchSpec{}, 8);
  auto x = random_input(1, 64, 14);
  auto path = net.forward_transform(nullptr, x, BnMode::Eval);
  auto natural = net.dec_natural.forward(nullptr, net.enc_natural.forward(nullptr, x, BnMode::Eval), BnMode::Eval);
  CHECK(path->shape == natural->shape);
  double diff = 0.0;
  for (std::size_t i = 0; i < path->numel(); ++i) diff += std::abs(path->data[i] - natural->data[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("shape contract: every path returns (3,S,S) for S divisible by 8") {
  for (int s : {16, 24}) {
    ArchSpec arch;
    arch.input_size = s;
    HNetF net = init_hnet(arch, 9);
    auto x = random_input(2, s, 15);
    auto o_n = net.dec_natural.forward(nullptr, net.enc_natural.forward(nullptr, x, BnMode::Eval), BnMode::Eval);
    auto o_cg = net.dec_cg.forward(nullptr, net.enc_cg.forward(nullptr, x, BnMode::Eval), BnMode::Eval);
    auto o_t = net.forward_transform(nullptr, x, BnMode::Eval);
    for (const auto& o : {o_n, o_cg, o_t}) CHECK(o->shape == std::vector<int>{2, 3, s, s});
  }
}

TEST_CASE("encoder rejects wrong inputs") {
  HNetF net = init_hnet(ArchSpec{}, 10);
  auto wrong_ch = make_tensor<float>({1, 4, 64, 64});
  CHECK_THROWS_AS(net.enc_natural.forward(nullptr, wrong_ch, BnMode::Eval), DimensionError);
  auto wrong_size = make_tensor<float>({1, 3, 60, 60});
  CHECK_THROWS_AS(net.enc_natural.forward(nullptr, wrong_size, BnMode::Eval), DimensionError);
}

TEST_CASE("architecture symmetry: the two encoders and decoders share shapes") {
  HNetF net = init_hnet(ArchSpec{}, 11);
  auto en = net.group_state(ParamGroup::EncNatural);
  auto ecg = net.group_state(ParamGroup::EncCg);
  REQUIRE(en.size() == ecg.size());
  for (std::size_t i = 0; i < en.size(); ++i) CHECK(en[i]->shape == ecg[i]->shape);
  auto dn = net.group_state(ParamGroup::DecNatural);
  auto dcg = net.group_state(ParamGroup::DecCg);
  REQUIRE(dn.size() == dcg.size());
  for (std::size_t i = 0; i < dn.size(); ++i) CHECK(dn[i]->shape == dcg[i]->shape);
}

TEST_CASE("weight init is deterministic under the seed") {
  HNetF a = init_hnet(ArchSpec{}, 42);
  HNetF b = init_hnet(ArchSpec{}, 42);
  HNetF c = init_hnet(ArchSpec{}, 43);
  CHECK(state_hash(a.state_tensors()) == state_hash(b.state_tensors()));
  CHECK(state_hash(a.state_tensors()) != state_hash(c.state_tensors()));
}

TEST_CASE("activation scale probe: unit-variance input keeps stage stds in [0.1, 10]") {
  HNetF net = init_hnet(ArchSpec{}, 12);
  auto x = random_input(4, 64, 16);
  // probe each encoder stage output in train mode (batch statistics)
  TapeF* no_tape = nullptr;
  auto stats = [](const TensorPtrF& t) {
    double mu = 0, var = 0;
    for (float v : t->data) mu += v;
    mu /= t->numel();
    for (float v : t->data) var += (v - mu) * (v - mu);
    return std::sqrt(var / t->numel());
  };
  auto h1 = avg_pool2<float>(no_tape, elu<float>(no_tape, net.enc_natural.bn1.forward(no_tape, net.enc_natural.conv1.forward(no_tape, x), BnMode::Train)));
  auto h2 = avg_pool2<float>(no_tape, elu<float>(no_tape, net.enc_natural.bn2.forward(no_tape, net.enc_natural.conv2.forward(no_tape, h1), BnMode::Train)));
  auto h3 = avg_pool2<float>(no_tape, elu<float>(no_tape, net.enc_natural.bn3.forward(no_tape, net.enc_natural.conv3.forward(no_tape, h2), BnMode::Train)));
  auto h4 = elu<float>(no_tape, net.enc_natural.bn4.forward(no_tape, net.enc_natural.conv4.forward(no_tape, h3), BnMode::Train));
  for (const auto& h : {h1, h2, h3, h4}) {
    const double s = stats(h);
    CHECK(s > 0.1);
    CHECK(s < 10.0);
  }
  auto out = net.dec_natural.forward(no_tape, h4, BnMode::Train);
  const double s_out = stats(out);
  CHECK(s_out > 0.01);
  CHECK(s_out < 10.0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto dir = fs::temp_directory_path() / "nz_hnet_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.hnet").string();

  HNetF net = init_hnet(ArchSpec{}, 99);
  // make running stats non-trivial so they are covered by the round trip
  auto x = random_input(2, 64, 17);
  net.enc_natural.forward(nullptr, x, BnMode::Train);
  save_hnet(net, path);
  HNetF back = load_hnet(path);
  auto a = net.state_tensors();
  auto b = back.state_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->shape == b[i]->shape);
    for (std::size_t j = 0; j < a[i]->numel(); ++j) CHECK(a[i]->data[j] == b[i]->data[j]);
  }

  SUBCASE("arch mismatch on load is rejected") {
    CHECK_THROWS_AS(load_hnet(path, 256), FormatError);
    CHECK_NOTHROW(load_hnet(path, 64));
  }
  SUBCASE("corrupted magic header is rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_AS(load_hnet(path), FormatError);
  }
  SUBCASE("bad version is rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t v = 999;
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.close();
    CHECK_THROWS_AS(load_hnet(path), FormatError);
  }
  SUBCASE("truncated file is rejected") {
    std::error_code ec;
    const auto full = fs::file_size(path, ec);
    fs::resize_file(path, full / 2, ec);
    CHECK_THROWS_AS(load_hnet(path), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("parameter shapes derive from the arch spec alone") {
  ArchSpec arch;
  HNetF a(arch);
  HNetF b(arch);
  auto ta = a.state_tensors();
  auto tb = b.state_tensors();
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i]->shape == tb[i]->shape);
}
