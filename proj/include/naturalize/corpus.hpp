// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "naturalize/image_io.hpp"

namespace naturalize {

enum class Label : std::uint8_t { Natural = 1, Cg = 0 };

std::string to_string(Label l);
Label label_from_string(const std::string& s);

struct CorpusItem {
  PixelImage image;
  std::string id;
  Label label = Label::Cg;
};

struct ImageCorpus {
  std::vector<CorpusItem> items;
  int size = 0;  // shared square side S
  std::string source_tag;
  bool color = true;
  std::vector<std::string> skipped;  // files the loader had to skip

  std::size_t count() const { return items.size(); }
  std::uint64_t content_hash() const;
  std::vector<const PixelImage*> images_with_label(Label l) const;
};

enum class SynthKind { NaturalLike, CgLike };

SynthKind synth_kind_from_string(const std::string& s);

// Deterministic synthetic corpus. Natural-like images carry smooth random
// gradients, mid-frequency value-noise texture, per-pixel Gaussian sensor
// noise (sigma = 4 pixel units) and a slight channel misalignment. CG-like
// images are piecewise-smooth shaded ellipsoids with specular highlights,
// no sensor noise, and quantized shading bands. The sensor noise inflates
// the tails of difference histograms, which is what separates the classes.
ImageCorpus synth_corpus(SynthKind kind, int count, int size, std::uint64_t seed);

// Directory layout: manifest.json ([{id,label,file}, ...]) plus image files
// (PNG, binary PPM or PGM). Images are resized to target_size with bilinear
// interpolation; grayscale loads as three identical channels. Unreadable
// files are skipped with a warning and recorded in `skipped`.
ImageCorpus load_corpus(const std::string& dir, int target_size);

void save_corpus(const ImageCorpus& corpus, const std::string& dir);

}  // namespace naturalize
