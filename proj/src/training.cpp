// SPDX-License-Identifier: Apache-2.0
#include "naturalize/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "naturalize/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace naturalize {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw ContractError("train config alpha must lie in [0,1), got " + std::to_string(alpha));
  if (learning_rate <= 0.0) throw ContractError("train config learning rate must be positive");
  if (batch_size < 1) throw ContractError("train config batch size must be >= 1");
  if (iterations_per_epoch < 0 || epochs < 0)
    throw ContractError("train config iteration counts must be non-negative");
  if (input_size <= 0 || input_size % 8 != 0)
    throw ContractError("train config input size must be divisible by 8");
}

ClassSampler::ClassSampler(std::size_t corpus_size, std::uint64_t seed, const std::string& tag)
    : n_(corpus_size), seed_(seed), tag_(tag) {
  if (n_ == 0) throw ContractError("sampler needs a non-empty corpus (" + tag + ")");
  reshuffle();
}

void ClassSampler::reshuffle() {
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = static_cast<int>(i);
  RandomStream rng(derive_seed(seed_, "shuffle-" + tag_, epoch_));
  rng.shuffle(order_);
  pos_ = 0;
}

std::vector<int> ClassSampler::next(int batch_size) {
  std::vector<int> out;
  out.reserve(batch_size);
  while (static_cast<int>(out.size()) < batch_size) {
    if (pos_ == n_) {
      ++epoch_;
      reshuffle();
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

void ClassSampler::restore(std::uint64_t epoch, std::size_t pos) {
  epoch_ = epoch;
  reshuffle();
  pos_ = std::min(pos, n_);
}

Trainer::Trainer(HNetF& net, const ImageCorpus& natural, const ImageCorpus& cg,
                 const BlackBoxScorer& detector, const PerceptualNetF& perceptual,
                 TrainConfig cfg)
    : net_(net),
      natural_(natural),
      cg_(cg),
      detector_(detector),
      perceptual_(perceptual),
      cfg_(std::move(cfg)) {
  cfg_.validate();
  weights_.alpha = cfg_.alpha;
  if (natural_.items.empty() || cg_.items.empty())
    throw ContractError("training needs non-empty natural and cg corpora");

  auto extend = [](std::vector<TensorPtrF>& dst, const std::vector<TensorPtrF>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  };
  extend(params1_, net_.group_learnable(ParamGroup::EncNatural));
  extend(params1_, net_.group_learnable(ParamGroup::DecNatural));
  extend(params2_, net_.group_learnable(ParamGroup::EncCg));
  extend(params2_, net_.group_learnable(ParamGroup::DecCg));
  extend(params3_, net_.group_learnable(ParamGroup::Transformer));
  extend(params4_, net_.group_learnable(ParamGroup::EncCg));
  extend(params4_, net_.group_learnable(ParamGroup::Transformer));
  extend(params4_, net_.group_learnable(ParamGroup::DecNatural));

  const float lr = static_cast<float>(cfg_.learning_rate);
  for (auto* opt : {&opt1_, &opt2_, &opt3_, &opt4_}) opt->lr = lr;
  opt1_.init(params1_);
  opt2_.init(params2_);
  opt3_.init(params3_);
  opt4_.init(params4_);

  sampler_natural_ = ClassSampler(natural_.items.size(), cfg_.seed, "natural");
  sampler_cg_ = ClassSampler(cg_.items.size(), cfg_.seed, "cg");
  metrics_path_ = (fs::path(cfg_.out_dir) / "metrics.jsonl").string();
}

TensorPtrF Trainer::make_batch(Label cls, const std::vector<int>& indices) const {
  const ImageCorpus& corpus = cls == Label::Natural ? natural_ : cg_;
  std::vector<const PixelImage*> imgs;
  imgs.reserve(indices.size());
  for (int i : indices) imgs.push_back(&corpus.items[static_cast<std::size_t>(i)].image);
  return batch_from_images(imgs);
}

double Trainer::batch_adversarial_loss(const Tensor<float>& output, int target_label) {
  const int n = output.shape[0];
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const PixelImage img = image_from_tensor(output, i);
    ++detector_calls_;
    acc += adversarial_loss(detector_.score(img), target_label);
  }
  return acc / n;
}

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void check_finite(const StepMetrics& m) {
  for (const auto& v : {m.l_vgg, m.l_adv, m.l_tol, m.l_latent})
    if (v && !std::isfinite(*v))
      throw NumericError("non-finite loss in training step " + std::to_string(m.step));
  if (!std::isfinite(m.grad_norm))
    throw NumericError("non-finite gradient norm in training step " + std::to_string(m.step));
}

}  // namespace

StepMetrics Trainer::step1_natural_autoencoder(const TensorPtrF& batch_natural) {
  const double t0 = now_ms();
  StepMetrics m;
  m.step = 1;
  zero_grads(params1_);
  TapeF tape;
  auto latent = net_.enc_natural.forward(&tape, batch_natural, BnMode::Train);
  auto out = net_.dec_natural.forward(&tape, latent, BnMode::Train);
  auto lv = perceptual_loss<float>(&tape, perceptual_, out, batch_natural);
  m.l_vgg = static_cast<double>(lv->data[0]);
  m.l_adv = batch_adversarial_loss(*out, 1);  // output must read as natural
  m.l_tol = total_loss(*m.l_vgg, *m.l_adv, weights_);
  backward(tape, lv);
  const auto info = blackbox_scaled_gradient<float>(*m.l_vgg, *m.l_adv, params1_, weights_);
  m.eq2_scale = info.scale;
  m.eq2_skipped = info.skipped;
  m.grad_norm = grad_norm(params1_);
  check_finite(m);
  adam_step(params1_, opt1_);
  m.wall_ms = cfg_.zero_wall_time ? 0.0 : now_ms() - t0;
  return m;
}

StepMetrics Trainer::step2_cg_autoencoder(const TensorPtrF& batch_cg) {
  const double t0 = now_ms();
  StepMetrics m;
  m.step = 2;
  zero_grads(params2_);
  TapeF tape;
  auto latent = net_.enc_cg.forward(&tape, batch_cg, BnMode::Train);
  auto out = net_.dec_cg.forward(&tape, latent, BnMode::Train);
  auto lv = perceptual_loss<float>(&tape, perceptual_, out, batch_cg);
  m.l_vgg = static_cast<double>(lv->data[0]);
  backward(tape, lv);  // no detector loss in this step
  m.grad_norm = grad_norm(params2_);
  check_finite(m);
  adam_step(params2_, opt2_);
  m.wall_ms = cfg_.zero_wall_time ? 0.0 : now_ms() - t0;
  return m;
}

StepMetrics Trainer::step3_transformer(const TensorPtrF& batch_natural) {
  const double t0 = now_ms();
  StepMetrics m;
  m.step = 3;
  zero_grads(params3_);
  // both encoders are frozen here and run in eval mode; only the
  // transformer is on the tape
  auto latent_nat = net_.enc_natural.forward(nullptr, batch_natural, BnMode::Eval);
  auto latent_cg = net_.enc_cg.forward(nullptr, batch_natural, BnMode::Eval);
  TapeF tape;
  auto mapped = net_.transformer.forward(&tape, latent_cg, BnMode::Train);
  auto loss = mse_loss<float>(&tape, latent_nat, mapped);
  m.l_latent = static_cast<double>(loss->data[0]);
  backward(tape, loss);
  m.grad_norm = grad_norm(params3_);
  check_finite(m);
  adam_step(params3_, opt3_);
  m.wall_ms = cfg_.zero_wall_time ? 0.0 : now_ms() - t0;
  return m;
}

StepMetrics Trainer::step4_transform_path(const TensorPtrF& batch_cg) {
  const double t0 = now_ms();
  StepMetrics m;
  m.step = 4;
  zero_grads(params4_);
  TapeF tape;
  auto latent = net_.enc_cg.forward(&tape, batch_cg, BnMode::Train);
  auto mapped = net_.transformer.forward(&tape, latent, BnMode::Train);
  auto out = net_.dec_natural.forward(&tape, mapped, BnMode::Train);
  auto lv = perceptual_loss<float>(&tape, perceptual_, out, batch_cg);
  m.l_vgg = static_cast<double>(lv->data[0]);
  m.l_adv = batch_adversarial_loss(*out, 1);  // attack target: natural
  m.l_tol = total_loss(*m.l_vgg, *m.l_adv, weights_);
  backward(tape, lv);
  const auto info = blackbox_scaled_gradient<float>(*m.l_vgg, *m.l_adv, params4_, weights_);
  m.eq2_scale = info.scale;
  m.eq2_skipped = info.skipped;
  m.grad_norm = grad_norm(params4_);
  check_finite(m);
  adam_step(params4_, opt4_);
  m.wall_ms = cfg_.zero_wall_time ? 0.0 : now_ms() - t0;
  return m;
}

std::vector<StepMetrics> Trainer::iterate() {
  std::vector<StepMetrics> out;
  out.push_back(step1_natural_autoencoder(make_batch(Label::Natural, sampler_natural_.next(cfg_.batch_size))));
  out.push_back(step2_cg_autoencoder(make_batch(Label::Cg, sampler_cg_.next(cfg_.batch_size))));
  out.push_back(step3_transformer(make_batch(Label::Natural, sampler_natural_.next(cfg_.batch_size))));
  out.push_back(step4_transform_path(make_batch(Label::Cg, sampler_cg_.next(cfg_.batch_size))));
  ++iteration_;
  return out;
}

void Trainer::write_metrics_line(std::uint64_t iteration, const StepMetrics& m) {
  std::ofstream out(metrics_path_, std::ios::app);
  if (!out) throw IoError("cannot append metrics log " + metrics_path_);
  json line{{"iteration", iteration},
            {"step", m.step},
            {"l_vgg", m.l_vgg ? json(*m.l_vgg) : json(nullptr)},
            {"l_adv", m.l_adv ? json(*m.l_adv) : json(nullptr)},
            {"l_tol", m.l_tol ? json(*m.l_tol) : json(nullptr)},
            {"l_latent", m.l_latent ? json(*m.l_latent) : json(nullptr)},
            {"grad_norm", m.grad_norm},
            {"wall_ms", m.wall_ms}};
  out << line.dump() << "\n";
}

void Trainer::save_checkpoint_pair(const std::string& stem) const {
  save_hnet(net_, stem + ".hnet");
  save_state(stem + ".hnts");
}

int Trainer::run() {
  fs::create_directories(cfg_.out_dir);
  if (iteration_ == 0) {
    // fresh log for fresh runs; resumed runs append
    std::ofstream reset(metrics_path_, std::ios::trunc);
  }
  const int total = cfg_.total_iterations();
  int executed = 0;
  while (iteration_ < static_cast<std::uint64_t>(total)) {
    const std::uint64_t this_iter = iteration_ + 1;
    std::vector<StepMetrics> metrics;
    try {
      metrics = iterate();
    } catch (const NumericError&) {
      save_checkpoint_pair((fs::path(cfg_.out_dir) / "diagnostic").string());
      throw;
    }
    for (const auto& m : metrics) write_metrics_line(this_iter, m);
    ++executed;
    if (cfg_.checkpoint_every > 0 && this_iter % static_cast<std::uint64_t>(cfg_.checkpoint_every) == 0) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "ckpt_%06llu", static_cast<unsigned long long>(this_iter));
      save_checkpoint_pair((fs::path(cfg_.out_dir) / buf).string());
    }
  }
  save_checkpoint_pair((fs::path(cfg_.out_dir) / "hnet_final").string());
  return executed;
}

void Trainer::save_state(const std::string& path) const {
  BinWriter w(path);
  w.magic("HNTS");
  w.u32(kCheckpointVersion);
  w.u64(iteration_);
  w.u64(sampler_natural_.epoch());
  w.u64(sampler_natural_.position());
  w.u64(sampler_cg_.epoch());
  w.u64(sampler_cg_.position());
  for (const auto* opt : {&opt1_, &opt2_, &opt3_, &opt4_}) {
    w.u64(static_cast<std::uint64_t>(opt->step));
    w.u64(opt->m.size());
    for (std::size_t i = 0; i < opt->m.size(); ++i) {
      w.f32_array(opt->m[i]);
      w.f32_array(opt->v[i]);
    }
  }
  w.close();
}

void Trainer::load_state(const std::string& path) {
  BinReader r(path);
  r.expect_magic("HNTS");
  r.expect_version(kCheckpointVersion);
  iteration_ = r.u64();
  const std::uint64_t ne = r.u64();
  const std::uint64_t np = r.u64();
  const std::uint64_t ce = r.u64();
  const std::uint64_t cp = r.u64();
  sampler_natural_.restore(ne, np);
  sampler_cg_.restore(ce, cp);
  for (auto* opt : {&opt1_, &opt2_, &opt3_, &opt4_}) {
    opt->step = static_cast<std::int64_t>(r.u64());
    const std::uint64_t count = r.u64();
    if (count != opt->m.size())
      throw FormatError("optimizer state in " + path + " does not match the model");
    for (std::size_t i = 0; i < count; ++i) {
      auto mv = r.f32_array();
      auto vv = r.f32_array();
      if (mv.size() != opt->m[i].size() || vv.size() != opt->v[i].size())
        throw FormatError("optimizer moment size mismatch in " + path);
      opt->m[i] = std::move(mv);
      opt->v[i] = std::move(vv);
    }
  }
}

HNetF train_loop(const TrainConfig& cfg) {
  cfg.validate();
  if (!fs::exists(cfg.natural_dir) || !fs::exists(cfg.cg_dir))
    throw IoError("training corpora paths must exist at run start");
  const ImageCorpus natural = load_corpus(cfg.natural_dir, cfg.input_size);
  const ImageCorpus cg = load_corpus(cfg.cg_dir, cfg.input_size);
  const DetectorModel detector = DetectorModel::load(cfg.detector_checkpoint);

  PerceptualNetF perceptual = cfg.perceptual_weights.empty()
                                  ? PerceptualNetF::seeded(derive_seed(cfg.seed, "pnet"))
                                  : load_perceptual(cfg.perceptual_weights);

  ArchSpec arch;
  arch.input_size = cfg.input_size;
  HNetF net = cfg.resume.empty() ? init_hnet(arch, cfg.seed) : load_hnet(cfg.resume, cfg.input_size);

  Trainer trainer(net, natural, cg, detector, perceptual, cfg);
  if (!cfg.resume.empty()) {
    fs::path state = cfg.resume;
    state.replace_extension(".hnts");
    if (!fs::exists(state))
      throw IoError("resume needs the training state file " + state.string());
    trainer.load_state(state.string());
  }
  trainer.run();
  return net;
}

}  // namespace naturalize
