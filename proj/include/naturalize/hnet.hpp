// SPDX-License-Identifier: Apache-2.0
//
// H-Net: two autoencoders with identical design but separate weights
// (natural and CG sides) bridged by a latent transformer of five bottleneck
// residual blocks. The CG transformation path is
// dec_natural(transformer(enc_cg(x))).

#pragma once

#include <string>
#include <vector>

#include "naturalize/rng.hpp"
#include "naturalize/tensor.hpp"

namespace naturalize {

struct ArchSpec {
  int input_size = 64;                              // square, divisible by 8
  std::vector<int> channel_plan = {3, 32, 64, 128, 128};  // encoder widths
  int latent_channels = 128;

  int latent_side() const { return input_size / 8; }

  void validate() const {
    if (input_size <= 0 || input_size % 8 != 0)
      throw DimensionError("arch input_size must be positive and divisible by 8, got " +
                           std::to_string(input_size));
    if (channel_plan.size() != 5 || channel_plan[0] != 3)
      throw DimensionError("arch channel plan must list 5 stage widths starting at 3");
    if (channel_plan.back() != latent_channels)
      throw DimensionError("arch latent width must equal the last encoder stage width");
  }

  bool operator==(const ArchSpec&) const = default;
};

template <class T>
struct Conv2dLayer {
  TensorPtr<T> w, b;
  int stride = 1;
  int padding = 1;

  Conv2dLayer() = default;
  Conv2dLayer(int c_in, int c_out, int k, int stride_, int padding_)
      : w(make_tensor<T>({c_out, c_in, k, k}, true)),
        b(make_tensor<T>({c_out}, true)),
        stride(stride_),
        padding(padding_) {}

  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x) const {
    return conv2d<T>(tape, x, w, b, stride, padding);
  }
  void init(RandomStream& rng) {
    const int fan_in = w->shape[1] * w->shape[2] * w->shape[3];
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : w->data) v = static_cast<T>(rng.normal(0.0, std));
    std::fill(b->data.begin(), b->data.end(), T(0));
  }
  void collect(std::vector<TensorPtr<T>>& learnable, std::vector<TensorPtr<T>>& state) const {
    learnable.push_back(w);
    learnable.push_back(b);
    state.push_back(w);
    state.push_back(b);
  }
};

template <class T>
struct ConvTranspose2dLayer {
  TensorPtr<T> w, b;  // w is [C_in, C_out, k, k]
  int stride = 2;
  int padding = 1;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(int c_in, int c_out, int k, int stride_, int padding_)
      : w(make_tensor<T>({c_in, c_out, k, k}, true)),
        b(make_tensor<T>({c_out}, true)),
        stride(stride_),
        padding(padding_) {}

  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x) const {
    return conv2d_transpose<T>(tape, x, w, b, stride, padding);
  }
  void init(RandomStream& rng) {
    const int fan_in = w->shape[0] * w->shape[2] * w->shape[3];
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : w->data) v = static_cast<T>(rng.normal(0.0, std));
    std::fill(b->data.begin(), b->data.end(), T(0));
  }
  void collect(std::vector<TensorPtr<T>>& learnable, std::vector<TensorPtr<T>>& state) const {
    learnable.push_back(w);
    learnable.push_back(b);
    state.push_back(w);
    state.push_back(b);
  }
};

template <class T>
struct BatchNorm2dLayer {
  TensorPtr<T> gamma, beta, running_mean, running_var;

  BatchNorm2dLayer() = default;
  explicit BatchNorm2dLayer(int channels)
      : gamma(make_tensor<T>({channels}, true)),
        beta(make_tensor<T>({channels}, true)),
        running_mean(make_tensor<T>({channels})),
        running_var(make_tensor<T>({channels})) {
    reset();
  }
  void reset() {
    std::fill(gamma->data.begin(), gamma->data.end(), T(1));
    std::fill(beta->data.begin(), beta->data.end(), T(0));
    std::fill(running_mean->data.begin(), running_mean->data.end(), T(0));
    std::fill(running_var->data.begin(), running_var->data.end(), T(1));
  }
  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x, BnMode mode) const {
    return batch_norm<T>(tape, x, gamma, beta, running_mean, running_var, mode);
  }
  void collect(std::vector<TensorPtr<T>>& learnable, std::vector<TensorPtr<T>>& state) const {
    learnable.push_back(gamma);
    learnable.push_back(beta);
    state.push_back(gamma);
    state.push_back(beta);
    state.push_back(running_mean);
    state.push_back(running_var);
  }
};

// Four conv stages; 2x2 average pooling after the first three. Input
// [*,3,S,S] normalized to [-1,1]; latent [*,128,S/8,S/8].
template <class T>
struct Encoder {
  Conv2dLayer<T> conv1, conv2, conv3, conv4;
  BatchNorm2dLayer<T> bn1, bn2, bn3, bn4;

  Encoder() = default;
  explicit Encoder(const ArchSpec& arch)
      : conv1(arch.channel_plan[0], arch.channel_plan[1], 3, 1, 1),
        conv2(arch.channel_plan[1], arch.channel_plan[2], 3, 1, 1),
        conv3(arch.channel_plan[2], arch.channel_plan[3], 3, 1, 1),
        conv4(arch.channel_plan[3], arch.channel_plan[4], 3, 1, 1),
        bn1(arch.channel_plan[1]),
        bn2(arch.channel_plan[2]),
        bn3(arch.channel_plan[3]),
        bn4(arch.channel_plan[4]) {}

  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x, BnMode mode) const {
    const int cdim = x->ndim() == 4 ? 1 : 0;
    if (x->shape[cdim] != conv1.w->shape[1])
      throw DimensionError("encoder expects " + std::to_string(conv1.w->shape[1]) +
                           " input channels, got " + std::to_string(x->shape[cdim]));
    const int h = x->shape[cdim + 1], w = x->shape[cdim + 2];
    if (h != w || h % 8 != 0)
      throw DimensionError("encoder input must be square with side divisible by 8, got " +
                           x->shape_str());
    auto h1 = avg_pool2<T>(tape, elu<T>(tape, bn1.forward(tape, conv1.forward(tape, x), mode)));
    auto h2 = avg_pool2<T>(tape, elu<T>(tape, bn2.forward(tape, conv2.forward(tape, h1), mode)));
    auto h3 = avg_pool2<T>(tape, elu<T>(tape, bn3.forward(tape, conv3.forward(tape, h2), mode)));
    return elu<T>(tape, bn4.forward(tape, conv4.forward(tape, h3), mode));
  }

  void init(RandomStream& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv3.init(rng);
    conv4.init(rng);
    bn1.reset();
    bn2.reset();
    bn3.reset();
    bn4.reset();
  }
  void collect(std::vector<TensorPtr<T>>& learnable, std::vector<TensorPtr<T>>& state) const {
    conv1.collect(learnable, state);
    bn1.collect(learnable, state);
    conv2.collect(learnable, state);
    bn2.collect(learnable, state);
    conv3.collect(learnable, state);
    bn3.collect(learnable, state);
    conv4.collect(learnable, state);
    bn4.collect(learnable, state);
  }
};

// One stride-2 transposed conv plus two sub-pixel (pixel-shuffle) stages,
// then a linear 3-channel conv. No tanh on the output.
template <class T>
struct Decoder {
  ConvTranspose2dLayer<T> tconv;
  Conv2dLayer<T> conv2, conv3, conv4;
  BatchNorm2dLayer<T> bn1, bn2;

  Decoder() = default;
  explicit Decoder(const ArchSpec& arch)
      : tconv(arch.latent_channels, 128, 3, 2, 1),
        conv2(128, 256, 3, 1, 1),   // 256 -> pixel_shuffle(2) -> 64 channels
        conv3(64, 128, 3, 1, 1),    // 128 -> pixel_shuffle(2) -> 32 channels
        conv4(32, 3, 3, 1, 1),
        bn1(128),
        bn2(64) {}

  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x, BnMode mode) const {
    auto h1 = elu<T>(tape, bn1.forward(tape, tconv.forward(tape, x), mode));
    auto h2 = elu<T>(tape, bn2.forward(tape, pixel_shuffle<T>(tape, conv2.forward(tape, h1), 2), mode));
    auto h3 = elu<T>(tape, pixel_shuffle<T>(tape, conv3.forward(tape, h2), 2));
    return conv4.forward(tape, h3);  // linear output, unbounded pre-clamp
  }

  void init(RandomStream& rng) {
    tconv.init(rng);
    conv2.init(rng);
    conv3.init(rng);
    conv4.init(rng);
    bn1.reset();
    bn2.reset();
  }
  void collect(std::vector<TensorPtr<T>>& learnable, std::vector<TensorPtr<T>>& state) const {
    tconv.collect(learnable, state);
    bn1.collect(learnable, state);
    conv2.collect(learnable, state);
    bn2.collect(learnable, state);
    conv3.collect(learnable, state);
    conv4.collect(learnable, state);
  }
};

// 1x1 reduce / 3x3 / 1x1 expand with batch norm per conv and an additive
// skip. Bottleneck width is a quarter of the block width. Zeroing the expand
// conv and its BN shift makes the block an exact identity.
template <class T>
struct BottleneckBlock {
  Conv2dLayer<T> reduce, mid, expand;
  BatchNorm2dLayer<T> bn_reduce, bn_mid, bn_expand;

  BottleneckBlock() = default;
  explicit BottleneckBlock(int channels)
      : reduce(channels, channels / 4, 1, 1, 0),
        mid(channels / 4, channels / 4, 3, 1, 1),
        expand(channels / 4, channels, 1, 1, 0),
        bn_reduce(channels / 4),
        bn_mid(channels / 4),
        bn_expand(channels) {}

  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x, BnMode mode) const {
    auto h = elu<T>(tape, bn_reduce.forward(tape, reduce.forward(tape, x), mode));
    h = elu<T>(tape, bn_mid.forward(tape, mid.forward(tape, h), mode));
    h = bn_expand.forward(tape, expand.forward(tape, h), mode);
    return add<T>(tape, x, h);
  }
  void init(RandomStream& rng) {
    reduce.init(rng);
    mid.init(rng);
    expand.init(rng);
    bn_reduce.reset();
    bn_mid.reset();
    bn_expand.reset();
  }
  void collect(std::vector<TensorPtr<T>>& learnable, std::vector<TensorPtr<T>>& state) const {
    reduce.collect(learnable, state);
    bn_reduce.collect(learnable, state);
    mid.collect(learnable, state);
    bn_mid.collect(learnable, state);
    expand.collect(learnable, state);
    bn_expand.collect(learnable, state);
  }
};

template <class T>
struct Transformer {
  std::vector<BottleneckBlock<T>> blocks;

  Transformer() = default;
  explicit Transformer(int channels) {
    for (int i = 0; i < 5; ++i) blocks.emplace_back(channels);
  }
  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x, BnMode mode) const {
    const int cdim = x->ndim() == 4 ? 1 : 0;
    if (blocks.empty() || x->shape[cdim] != blocks[0].reduce.w->shape[1])
      throw DimensionError("transformer expects " +
                           std::to_string(blocks.empty() ? 0 : blocks[0].reduce.w->shape[1]) +
                           " latent channels, got " + std::to_string(x->shape[cdim]));
    auto h = x;
    for (const auto& blk : blocks) h = blk.forward(tape, h, mode);
    return h;
  }
  void init(RandomStream& rng) {
    for (auto& blk : blocks) blk.init(rng);
  }
  void collect(std::vector<TensorPtr<T>>& learnable, std::vector<TensorPtr<T>>& state) const {
    for (const auto& blk : blocks) blk.collect(learnable, state);
  }
};

enum class ParamGroup { EncNatural, DecNatural, EncCg, DecCg, Transformer };

template <class T>
struct HNet {
  ArchSpec arch;
  Encoder<T> enc_natural, enc_cg;
  Decoder<T> dec_natural, dec_cg;
  Transformer<T> transformer;

  HNet() = default;
  explicit HNet(const ArchSpec& a)
      : arch(a),
        enc_natural(a),
        enc_cg(a),
        dec_natural(a),
        dec_cg(a),
        transformer(a.latent_channels) {
    arch.validate();
  }

  // Evaluation path, eq-style: dec_natural(transformer(enc_cg(x))).
  TensorPtr<T> forward_transform(Tape<T>* tape, const TensorPtr<T>& x, BnMode mode) const {
    return dec_natural.forward(tape, transformer.forward(tape, enc_cg.forward(tape, x, mode), mode), mode);
  }

  std::vector<TensorPtr<T>> group_learnable(ParamGroup g) const {
    std::vector<TensorPtr<T>> l, s;
    collect_group(g, l, s);
    return l;
  }
  std::vector<TensorPtr<T>> group_state(ParamGroup g) const {
    std::vector<TensorPtr<T>> l, s;
    collect_group(g, l, s);
    return s;
  }
  // All state tensors in declaration order (checkpoint order).
  std::vector<TensorPtr<T>> state_tensors() const {
    std::vector<TensorPtr<T>> l, s;
    for (auto g : {ParamGroup::EncNatural, ParamGroup::DecNatural, ParamGroup::EncCg,
                   ParamGroup::DecCg, ParamGroup::Transformer})
      collect_group(g, l, s);
    return s;
  }

  void init(std::uint64_t seed) {
    RandomStream rng(derive_seed(seed, "hnet-init"));
    enc_natural.init(rng);
    dec_natural.init(rng);
    enc_cg.init(rng);
    dec_cg.init(rng);
    transformer.init(rng);
  }

 private:
  void collect_group(ParamGroup g, std::vector<TensorPtr<T>>& l, std::vector<TensorPtr<T>>& s) const {
    switch (g) {
      case ParamGroup::EncNatural: enc_natural.collect(l, s); break;
      case ParamGroup::DecNatural: dec_natural.collect(l, s); break;
      case ParamGroup::EncCg: enc_cg.collect(l, s); break;
      case ParamGroup::DecCg: dec_cg.collect(l, s); break;
      case ParamGroup::Transformer: transformer.collect(l, s); break;
    }
  }
};

using HNetF = HNet<float>;

// He-initialized H-Net, deterministic under seed.
HNetF init_hnet(const ArchSpec& arch, std::uint64_t seed);

}  // namespace naturalize
