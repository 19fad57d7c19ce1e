// SPDX-License-Identifier: Apache-2.0
#include "naturalize/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "naturalize/errors.hpp"
#include "naturalize/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace naturalize {

std::string to_string(Label l) { return l == Label::Natural ? "natural" : "cg"; }

Label label_from_string(const std::string& s) {
  if (s == "natural") return Label::Natural;
  if (s == "cg") return Label::Cg;
  throw FormatError("unknown label '" + s + "' (expected natural or cg)");
}

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "natural") return SynthKind::NaturalLike;
  if (s == "cg") return SynthKind::CgLike;
  throw ContractError("unknown synth kind '" + s + "' (expected natural or cg)");
}

std::uint64_t ImageCorpus::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& item : items) {
    h = fnv1a64(item.id.data(), item.id.size(), h);
    const std::uint8_t lbl = static_cast<std::uint8_t>(item.label);
    h = fnv1a64(&lbl, 1, h);
    h = fnv1a64(item.image.data.data(), item.image.data.size(), h);
  }
  return h;
}

std::vector<const PixelImage*> ImageCorpus::images_with_label(Label l) const {
  std::vector<const PixelImage*> out;
  for (const auto& item : items)
    if (item.label == l) out.push_back(&item.image);
  return out;
}

namespace {

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::max(0.0, std::min(255.0, std::floor(v + 0.5))));
}

// bilinearly interpolated random lattice, lattice cell ~8 px
struct ValueNoise {
  int cells_y, cells_x;
  std::vector<double> lattice;

  ValueNoise(int h, int w, int cell, RandomStream& rng)
      : cells_y(h / cell + 2), cells_x(w / cell + 2), lattice(static_cast<std::size_t>(cells_y) * cells_x) {
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    cell_ = cell;
  }
  double at(int y, int x) const {
    const double fy = static_cast<double>(y) / cell_;
    const double fx = static_cast<double>(x) / cell_;
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const double ty = fy - y0, tx = fx - x0;
    auto l = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * cells_x + xx]; };
    return (1 - ty) * ((1 - tx) * l(y0, x0) + tx * l(y0, x0 + 1)) +
           ty * ((1 - tx) * l(y0 + 1, x0) + tx * l(y0 + 1, x0 + 1));
  }

 private:
  int cell_ = 8;
};

PixelImage synth_natural(int S, RandomStream& rng) {
  // shared luminance field: smooth gradient + radial term + texture
  const double base[3] = {rng.uniform(70, 180), rng.uniform(70, 180), rng.uniform(70, 180)};
  const double gx = rng.uniform(-50, 50), gy = rng.uniform(-50, 50);
  const double gr = rng.uniform(-40, 40);
  const double cx = rng.uniform(0.3, 0.7), cy = rng.uniform(0.3, 0.7);
  const int cell = std::max(4, S / 8);
  ValueNoise texture(S, S, cell, rng);
  const double tex_amp = rng.uniform(10.0, 18.0);
  const double gain[3] = {rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)};

  // continuous pre-noise field so channels can be sampled off-grid
  auto field = [&](double y, double x, int c) {
    const double u = x / S - cx, v = y / S - cy;
    const double lum = gx * (x / S - 0.5) + gy * (y / S - 0.5) + gr * (u * u + v * v) * 4.0;
    const int yi = std::max(0, std::min(S - 1, static_cast<int>(y)));
    const int xi = std::max(0, std::min(S - 1, static_cast<int>(x)));
    return base[c] + gain[c] * (lum + tex_amp * texture.at(yi, xi));
  };

  // slight channel misalignment: R and B sample sub-pixel shifted positions
  const double mis_x = rng.uniform(0.3, 0.8) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double mis_y = rng.uniform(0.3, 0.8) * (rng.uniform() < 0.5 ? -1.0 : 1.0);

  PixelImage img(3, S, S);
  auto sample = [&](double y, double x, int c) {
    const double yc = std::max(0.0, std::min(S - 1.001, y));
    const double xc = std::max(0.0, std::min(S - 1.001, x));
    const int y0 = static_cast<int>(yc), x0 = static_cast<int>(xc);
    const double ty = yc - y0, tx = xc - x0;
    return (1 - ty) * ((1 - tx) * field(y0, x0, c) + tx * field(y0, x0 + 1, c)) +
           ty * ((1 - tx) * field(y0 + 1, x0, c) + tx * field(y0 + 1, x0 + 1, c));
  };
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double r = sample(y + mis_y, x + mis_x, 0);
      const double g = field(y, x, 1);
      const double b = sample(y - mis_y, x - mis_x, 2);
      // per-pixel Gaussian sensor noise, sigma = 4 pixel units
      img.at(0, y, x) = clamp_u8(r + rng.normal(0.0, 4.0));
      img.at(1, y, x) = clamp_u8(g + rng.normal(0.0, 4.0));
      img.at(2, y, x) = clamp_u8(b + rng.normal(0.0, 4.0));
    }
  return img;
}

PixelImage synth_cg(int S, RandomStream& rng) {
  // smooth background gradient, then 1-3 shaded ellipsoids
  const double bg_top[3] = {rng.uniform(40, 200), rng.uniform(40, 200), rng.uniform(40, 200)};
  const double bg_bot[3] = {rng.uniform(40, 200), rng.uniform(40, 200), rng.uniform(40, 200)};

  struct Ellipsoid {
    double cx, cy, rx, ry, cosr, sinr;
    double color[3];
    double lx, ly, lz;       // light direction
    double spec_power, spec_gain;
  };
  const int n_obj = 1 + static_cast<int>(rng.uniform_int(3));
  std::vector<Ellipsoid> objs;
  for (int i = 0; i < n_obj; ++i) {
    Ellipsoid e;
    e.cx = rng.uniform(0.25, 0.75) * S;
    e.cy = rng.uniform(0.25, 0.75) * S;
    e.rx = rng.uniform(0.14, 0.34) * S;
    e.ry = rng.uniform(0.14, 0.34) * S;
    const double rot = rng.uniform(0.0, 3.14159265358979323846);
    e.cosr = std::cos(rot);
    e.sinr = std::sin(rot);
    // skin-ish palette, R >= G >= B
    e.color[0] = rng.uniform(140, 240);
    e.color[1] = e.color[0] * rng.uniform(0.65, 0.9);
    e.color[2] = e.color[1] * rng.uniform(0.6, 0.9);
    double lx = rng.uniform(-1, 1), ly = rng.uniform(-1, 1), lz = rng.uniform(0.6, 1.2);
    const double ln = std::sqrt(lx * lx + ly * ly + lz * lz);
    e.lx = lx / ln;
    e.ly = ly / ln;
    e.lz = lz / ln;
    e.spec_power = rng.uniform(8, 32);
    e.spec_gain = rng.uniform(0.3, 0.8);
    objs.push_back(e);
  }
  const double bands = 10.0 + static_cast<double>(rng.uniform_int(9));  // 10..18 shading bands

  PixelImage img(3, S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double px[3];
      const double t = static_cast<double>(y) / S;
      for (int c = 0; c < 3; ++c) px[c] = bg_top[c] * (1 - t) + bg_bot[c] * t;
      for (const auto& e : objs) {
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (dx * e.cosr + dy * e.sinr) / e.rx;
        const double v = (-dx * e.sinr + dy * e.cosr) / e.ry;
        const double rr = u * u + v * v;
        if (rr >= 1.0) continue;
        const double nz = std::sqrt(1.0 - rr);
        // unit surface normal of the implied ellipsoid
        double nx = u, ny = v;
        const double nn = std::sqrt(nx * nx + ny * ny + nz * nz);
        nx /= nn;
        ny /= nn;
        const double nzn = nz / nn;
        const double lambert = std::max(0.0, nx * e.lx + ny * e.ly + nzn * e.lz);
        // Blinn-style highlight with the view along +z
        const double hz = e.lz + 1.0;
        const double hn = std::sqrt(e.lx * e.lx + e.ly * e.ly + hz * hz);
        const double spec = e.spec_gain * std::pow(std::max(0.0, (nx * e.lx + ny * e.ly + nzn * hz) / hn), e.spec_power);
        double shade = 0.25 + 0.75 * lambert;
        // quantized shading bands: flat plateaus, no dithering
        shade = std::floor(shade * bands) / bands;
        for (int c = 0; c < 3; ++c) px[c] = e.color[c] * shade + 255.0 * spec;
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = clamp_u8(px[c]);
    }

  // band-quantize the whole frame so background gradients terrace too
  const double q = 8.0 + static_cast<double>(rng.uniform_int(9));  // step 8..16
  for (auto& v : img.data) v = clamp_u8(std::floor(v / q + 0.5) * q);
  return img;
}

}  // namespace

ImageCorpus synth_corpus(SynthKind kind, int count, int size, std::uint64_t seed) {
  if (count < 1) throw ContractError("synth corpus count must be >= 1");
  if (size < 8) throw ContractError("synth corpus size must be >= 8");
  ImageCorpus corpus;
  corpus.size = size;
  corpus.color = true;
  corpus.source_tag = (kind == SynthKind::NaturalLike ? "synth-natural" : "synth-cg");
  const char* prefix = kind == SynthKind::NaturalLike ? "nat" : "cg";
  for (int i = 0; i < count; ++i) {
    RandomStream rng(derive_seed(seed, corpus.source_tag, static_cast<std::uint64_t>(i)));
    CorpusItem item;
    item.image = kind == SynthKind::NaturalLike ? synth_natural(size, rng) : synth_cg(size, rng);
    item.label = kind == SynthKind::NaturalLike ? Label::Natural : Label::Cg;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05d", prefix, i);
    item.id = buf;
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

ImageCorpus load_corpus(const std::string& dir, int target_size) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open corpus manifest " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("malformed corpus manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_array())
    throw FormatError("corpus manifest must be a JSON array of {id,label,file}");

  ImageCorpus corpus;
  corpus.size = target_size;
  corpus.source_tag = dir;
  for (const auto& entry : manifest) {
    std::string file;
    try {
      file = entry.at("file").get<std::string>();
      CorpusItem item;
      item.id = entry.at("id").get<std::string>();
      item.label = label_from_string(entry.at("label").get<std::string>());
      PixelImage img = read_image((root / file).string());
      if (target_size > 0 && (img.height != target_size || img.width != target_size))
        img = resize_bilinear(img, target_size, target_size);
      if (corpus.size == 0) corpus.size = img.height;
      item.image = std::move(img);
      corpus.items.push_back(std::move(item));
    } catch (const Error& e) {
      std::cerr << "[naturalize] warning: skipping corpus entry '" << file << "': " << e.what()
                << "\n";
      corpus.skipped.push_back(file);
    } catch (const json::exception& e) {
      std::cerr << "[naturalize] warning: skipping malformed manifest entry: " << e.what() << "\n";
      corpus.skipped.push_back(entry.dump());
    }
  }
  return corpus;
}

void save_corpus(const ImageCorpus& corpus, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir + ": " + ec.message());
  json manifest = json::array();
  for (const auto& item : corpus.items) {
    const std::string file = item.id + ".png";
    write_png(item.image, (root / file).string());
    manifest.push_back({{"id", item.id}, {"label", to_string(item.label)}, {"file", file}});
  }
  std::ofstream out(root / "manifest.json");
  if (!out) throw IoError("cannot write corpus manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

}  // namespace naturalize
