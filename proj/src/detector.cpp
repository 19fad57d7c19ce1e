// SPDX-License-Identifier: Apache-2.0
#include "naturalize/detector.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iostream>

#include "naturalize/checkpoint.hpp"
#include "naturalize/rng.hpp"

namespace naturalize {

namespace {

constexpr int kHidden = 32;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// 2-parameter logistic fit p = sigma(a*z + b) by Newton iterations with a
// tiny ridge so separable data stays finite.
void fit_logistic(const std::vector<double>& z, const std::vector<int>& y, double& a, double& b) {
  a = 1.0;
  b = 0.0;
  const double ridge = 1e-6;
  for (int it = 0; it < 50; ++it) {
    double g_a = ridge * a, g_b = 0.0;
    double h_aa = ridge, h_ab = 0.0, h_bb = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = sigmoid(a * z[i] + b);
      const double r = p - y[i];
      g_a += r * z[i];
      g_b += r;
      const double w = std::max(p * (1.0 - p), 1e-12);
      h_aa += w * z[i] * z[i];
      h_ab += w * z[i];
      h_bb += w;
    }
    const double det = h_aa * h_bb - h_ab * h_ab;
    if (std::abs(det) < 1e-30) break;
    const double da = (h_bb * g_a - h_ab * g_b) / det;
    const double db = (h_aa * g_b - h_ab * g_a) / det;
    a -= da;
    b -= db;
    if (std::abs(da) + std::abs(db) < 1e-12) break;
  }
}

}  // namespace

DetectorVariant detector_variant_from_string(const std::string& s) {
  if (s == "mlp") return DetectorVariant::Mlp;
  if (s == "flda") return DetectorVariant::Flda;
  throw ContractError("unknown detector variant '" + s + "' (expected mlp or flda)");
}

std::string to_string(DetectorVariant v) {
  return v == DetectorVariant::Mlp ? "mlp" : "flda";
}

DetectorModel DetectorModel::train(DetectorVariant variant,
                                   const std::vector<const PixelImage*>& natural,
                                   const std::vector<const PixelImage*>& cg,
                                   std::uint64_t seed) {
  if (natural.empty() || cg.empty())
    throw ContractError("detector training needs non-empty natural and cg corpora");
  std::vector<FeatureVector> x_nat, x_cg;
  x_nat.reserve(natural.size());
  x_cg.reserve(cg.size());
  for (const auto* img : natural) x_nat.push_back(extract_features(*img));
  for (const auto* img : cg) x_cg.push_back(extract_features(*img));
  return train_features(variant, x_nat, x_cg, seed);
}

DetectorModel DetectorModel::train_features(DetectorVariant variant,
                                            const std::vector<FeatureVector>& natural,
                                            const std::vector<FeatureVector>& cg,
                                            std::uint64_t seed) {
  if (natural.empty() || cg.empty())
    throw ContractError("detector training needs non-empty natural and cg corpora");
  std::vector<FeatureVector> x;
  std::vector<int> y;  // natural=1, cg=0
  x.reserve(natural.size() + cg.size());
  for (const auto& f : natural) {
    x.push_back(f);
    y.push_back(1);
  }
  for (const auto& f : cg) {
    x.push_back(f);
    y.push_back(0);
  }
  DetectorModel model;
  model.variant_ = variant;
  if (variant == DetectorVariant::Mlp)
    model.train_mlp(x, y, seed);
  else
    model.train_flda(x, y);
  model.trained_ = true;
  return model;
}

void DetectorModel::train_mlp(const std::vector<FeatureVector>& x, const std::vector<int>& y,
                              std::uint64_t seed) {
  const int n = static_cast<int>(x.size());
  const int d = kFeatureDim;

  feat_mean_.assign(d, 0.0f);
  feat_std_.assign(d, 1.0f);
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (const auto& f : x)
    for (int j = 0; j < d; ++j) mean[j] += f[j];
  for (auto& m : mean) m /= n;
  for (const auto& f : x)
    for (int j = 0; j < d; ++j) {
      const double dv = f[j] - mean[j];
      var[j] += dv * dv;
    }
  for (int j = 0; j < d; ++j) {
    feat_mean_[j] = static_cast<float>(mean[j]);
    const double s = std::sqrt(var[j] / n);
    feat_std_[j] = static_cast<float>(s > 1e-12 ? s : 1.0);
  }

  Eigen::MatrixXd X(n, d);
  Eigen::VectorXd Y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = (x[i][j] - feat_mean_[j]) / feat_std_[j];
    Y(i) = y[i];
  }

  // stratified 80/20 train/validation split
  RandomStream rng(derive_seed(seed, "detector-mlp"));
  std::vector<int> idx_nat, idx_cg;
  for (int i = 0; i < n; ++i) (y[i] ? idx_nat : idx_cg).push_back(i);
  rng.shuffle(idx_nat);
  rng.shuffle(idx_cg);
  std::vector<int> train_idx, val_idx;
  auto split = [&](std::vector<int>& src) {
    const std::size_t n_val = std::max<std::size_t>(1, src.size() / 5);
    for (std::size_t i = 0; i < src.size(); ++i)
      (i < n_val ? val_idx : train_idx).push_back(src[i]);
  };
  split(idx_nat);
  split(idx_cg);

  Eigen::MatrixXd W1(kHidden, d);
  Eigen::VectorXd B1 = Eigen::VectorXd::Zero(kHidden);
  Eigen::VectorXd W2(kHidden);
  double B2 = 0.0;
  const double s1 = std::sqrt(2.0 / d), s2 = std::sqrt(2.0 / kHidden);
  for (int i = 0; i < kHidden; ++i) {
    for (int j = 0; j < d; ++j) W1(i, j) = rng.normal(0.0, s1);
    W2(i) = rng.normal(0.0, s2);
  }

  auto elu_v = [](double v) { return v > 0 ? v : std::expm1(v); };
  auto forward_one = [&](const Eigen::RowVectorXd& xi, Eigen::VectorXd& h, Eigen::VectorXd& a) {
    a = W1 * xi.transpose() + B1;
    h = a.unaryExpr(elu_v);
    return sigmoid(W2.dot(h) + B2);
  };
  auto bce = [&](const std::vector<int>& idx) {
    double loss = 0.0;
    Eigen::VectorXd h, a;
    for (int i : idx) {
      const double p = std::min(std::max(forward_one(X.row(i), h, a), 1e-12), 1.0 - 1e-12);
      loss += -(Y(i) * std::log(p) + (1 - Y(i)) * std::log(1 - p));
    }
    return loss / static_cast<double>(idx.size());
  };

  // full-batch Adam
  Eigen::MatrixXd mW1 = Eigen::MatrixXd::Zero(kHidden, d), vW1 = mW1;
  Eigen::VectorXd mB1 = Eigen::VectorXd::Zero(kHidden), vB1 = mB1;
  Eigen::VectorXd mW2 = Eigen::VectorXd::Zero(kHidden), vW2 = mW2;
  double mB2 = 0.0, vB2 = 0.0;
  const double lr = 1e-2, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double best_val = 1e300;
  int best_epoch = 0;
  Eigen::MatrixXd bestW1 = W1;
  Eigen::VectorXd bestB1 = B1, bestW2 = W2;
  double bestB2 = B2;

  const int max_epochs = 200, patience = 10;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    Eigen::MatrixXd gW1 = Eigen::MatrixXd::Zero(kHidden, d);
    Eigen::VectorXd gB1 = Eigen::VectorXd::Zero(kHidden);
    Eigen::VectorXd gW2 = Eigen::VectorXd::Zero(kHidden);
    double gB2 = 0.0;
    Eigen::VectorXd h, a;
    for (int i : train_idx) {
      const double p = forward_one(X.row(i), h, a);
      const double r = p - Y(i);  // dBCE/dlogit
      gW2 += r * h;
      gB2 += r;
      Eigen::VectorXd dh = r * W2;
      for (int k = 0; k < kHidden; ++k) dh(k) *= a(k) > 0 ? 1.0 : std::exp(a(k));
      gW1 += dh * X.row(i);
      gB1 += dh;
    }
    const double inv = 1.0 / static_cast<double>(train_idx.size());
    gW1 *= inv;
    gB1 *= inv;
    gW2 *= inv;
    gB2 *= inv;

    const double bc1 = 1.0 - std::pow(beta1, epoch), bc2 = 1.0 - std::pow(beta2, epoch);
    auto adam = [&](auto& p, auto& m, auto& v, const auto& g) {
      m = beta1 * m + (1 - beta1) * g;
      v = beta2 * v + (1 - beta2) * g.cwiseProduct(g);
      p -= lr * (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
    };
    adam(W1, mW1, vW1, gW1);
    adam(B1, mB1, vB1, gB1);
    adam(W2, mW2, vW2, gW2);
    mB2 = beta1 * mB2 + (1 - beta1) * gB2;
    vB2 = beta2 * vB2 + (1 - beta2) * gB2 * gB2;
    B2 -= lr * (mB2 / bc1) / (std::sqrt(vB2 / bc2) + eps);

    const double val = bce(val_idx);
    if (val < best_val - 1e-9) {
      best_val = val;
      best_epoch = epoch;
      bestW1 = W1;
      bestB1 = B1;
      bestW2 = W2;
      bestB2 = B2;
    } else if (epoch - best_epoch >= patience) {
      break;
    }
  }

  w1_.resize(static_cast<std::size_t>(kHidden) * d);
  b1_.resize(kHidden);
  w2_.resize(kHidden);
  for (int i = 0; i < kHidden; ++i) {
    for (int j = 0; j < d; ++j) w1_[static_cast<std::size_t>(i) * d + j] = static_cast<float>(bestW1(i, j));
    b1_[i] = static_cast<float>(bestB1(i));
    w2_[i] = static_cast<float>(bestW2(i));
  }
  b2_ = static_cast<float>(bestB2);
}

void DetectorModel::train_flda(const std::vector<FeatureVector>& x, const std::vector<int>& y) {
  const int d = kFeatureDim;
  const int n = static_cast<int>(x.size());
  feat_mean_.assign(d, 0.0f);
  feat_std_.assign(d, 1.0f);

  Eigen::VectorXd mu_nat = Eigen::VectorXd::Zero(d), mu_cg = Eigen::VectorXd::Zero(d);
  int n_nat = 0, n_cg = 0;
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const Eigen::Matrix<double, kFeatureDim, 1>> xi(x[i].data());
    if (y[i]) {
      mu_nat += xi;
      ++n_nat;
    } else {
      mu_cg += xi;
      ++n_cg;
    }
  }
  mu_nat /= std::max(n_nat, 1);
  mu_cg /= std::max(n_cg, 1);

  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const Eigen::Matrix<double, kFeatureDim, 1>> xi(x[i].data());
    const Eigen::VectorXd c = xi - (y[i] ? mu_nat : mu_cg);
    sw.noalias() += c * c.transpose();
  }

  const Eigen::VectorXd diff = mu_nat - mu_cg;
  Eigen::VectorXd w;
  auto solve_ok = [&](const Eigen::MatrixXd& m) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success) return false;
    w = ldlt.solve(diff);
    if (!w.allFinite()) return false;
    const double resid = (m * w - diff).norm();
    return resid <= 1e-6 * std::max(1.0, diff.norm());
  };
  if (!solve_ok(sw)) {
    std::cerr << "[naturalize] warning: degenerate within-class scatter; "
                 "ridge-regularizing with lambda=1e-6\n";
    if (!solve_ok(sw + 1e-6 * Eigen::MatrixXd::Identity(d, d)))
      w = diff;  // last resort: class-mean direction
  }

  const double norm = w.norm();
  if (norm < 1e-12) {
    // indistinguishable classes; fall back to a fixed unit direction
    w = Eigen::VectorXd::Zero(d);
    w(0) = 1.0;
  } else {
    w /= norm;
  }
  if (w.dot(diff) < 0.0) w = -w;  // orient toward the natural class

  flda_t_ = w.dot(mu_nat + mu_cg) / 2.0;

  // snap projection to f32 so a save/load round trip scores identically
  w_flda_.resize(d);
  for (int j = 0; j < d; ++j) w_flda_[j] = static_cast<float>(w(j));

  std::vector<double> z(n);
  std::vector<int> labels(y);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += static_cast<double>(w_flda_[j]) * x[i][j];
    z[i] = acc - flda_t_;
  }
  fit_logistic(z, labels, calib_a_, calib_b_);
}

double DetectorModel::score_features(const FeatureVector& f) const {
  if (!trained_) throw ContractError("detector model is not trained");
  if (variant_ == DetectorVariant::Flda) {
    double z = 0.0;
    for (int j = 0; j < kFeatureDim; ++j) z += static_cast<double>(w_flda_[j]) * f[j];
    return sigmoid(calib_a_ * (z - flda_t_) + calib_b_);
  }
  double h[kHidden];
  for (int i = 0; i < kHidden; ++i) {
    double a = b1_[i];
    const float* row = w1_.data() + static_cast<std::size_t>(i) * kFeatureDim;
    for (int j = 0; j < kFeatureDim; ++j)
      a += static_cast<double>(row[j]) * ((f[j] - feat_mean_[j]) / feat_std_[j]);
    h[i] = a > 0 ? a : std::expm1(a);
  }
  double logit = b2_;
  for (int i = 0; i < kHidden; ++i) logit += static_cast<double>(w2_[i]) * h[i];
  return sigmoid(logit);
}

double DetectorModel::score(const PixelImage& img) const {
  return score_features(extract_features(img));
}

bool DetectorModel::classify_natural(const PixelImage& img) const {
  return score(img) >= threshold_;
}

void DetectorModel::save(const std::string& path) const {
  if (!trained_) throw ContractError("refusing to save an untrained detector");
  BinWriter w(path);
  w.magic("DTCT");
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(variant_));
  w.u32(kFeatureDim);
  w.f64(threshold_);
  w.f64(calib_a_);
  w.f64(calib_b_);
  w.f64(flda_t_);
  w.f32_array(feat_mean_);
  w.f32_array(feat_std_);
  if (variant_ == DetectorVariant::Mlp) {
    w.f32_array(w1_);
    w.f32_array(b1_);
    w.f32_array(w2_);
    w.f32(b2_);
  } else {
    w.f32_array(w_flda_);
  }
  w.close();
}

DetectorModel DetectorModel::load(const std::string& path) {
  BinReader r(path);
  r.expect_magic("DTCT");
  r.expect_version(kCheckpointVersion);
  DetectorModel m;
  const std::uint8_t variant = r.u8();
  if (variant > 1) throw FormatError("unknown detector variant byte in " + path);
  m.variant_ = static_cast<DetectorVariant>(variant);
  const std::uint32_t dim = r.u32();
  if (dim != kFeatureDim)
    throw FormatError("detector feature dim " + std::to_string(dim) + " in " + path +
                      " does not match expected " + std::to_string(kFeatureDim));
  m.threshold_ = r.f64();
  m.calib_a_ = r.f64();
  m.calib_b_ = r.f64();
  m.flda_t_ = r.f64();
  m.feat_mean_ = r.f32_array();
  m.feat_std_ = r.f32_array();
  if (m.variant_ == DetectorVariant::Mlp) {
    m.w1_ = r.f32_array();
    m.b1_ = r.f32_array();
    m.w2_ = r.f32_array();
    m.b2_ = r.f32();
    if (m.w1_.size() != static_cast<std::size_t>(kHidden) * kFeatureDim ||
        m.b1_.size() != kHidden || m.w2_.size() != kHidden)
      throw FormatError("detector weight sizes corrupt in " + path);
  } else {
    m.w_flda_ = r.f32_array();
    if (m.w_flda_.size() != kFeatureDim)
      throw FormatError("detector projection size corrupt in " + path);
  }
  m.trained_ = true;
  return m;
}

}  // namespace naturalize
