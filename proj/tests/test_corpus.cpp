// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "naturalize/corpus.hpp"
#include "naturalize/features.hpp"
#include "naturalize/rng.hpp"

using namespace naturalize;
namespace fs = std::filesystem;

TEST_CASE("synth corpus is deterministic under the seed") {
  const auto a = synth_corpus(SynthKind::NaturalLike, 10, 32, 7);
  const auto b = synth_corpus(SynthKind::NaturalLike, 10, 32, 7);
  const auto c = synth_corpus(SynthKind::NaturalLike, 10, 32, 8);
  CHECK(a.content_hash() == b.content_hash());
  CHECK(a.content_hash() != c.content_hash());
  CHECK(a.count() == 10);
  CHECK(a.items[0].label == Label::Natural);
}

TEST_CASE("synth corpus rejects bad arguments") {
  CHECK_THROWS_AS(synth_corpus(SynthKind::CgLike, 0, 32, 1), ContractError);
  CHECK_THROWS_AS(synth_corpus(SynthKind::CgLike, 1, 4, 1), ContractError);
}

TEST_CASE("natural-like images have heavier horizontal-difference variance than cg-like") {
  const auto nat = synth_corpus(SynthKind::NaturalLike, 100, 32, 11);
  const auto cg = synth_corpus(SynthKind::CgLike, 100, 32, 22);
  auto mean_variance = [](const ImageCorpus& corpus) {
    double acc = 0.0;
    for (const auto& item : corpus.items) {
      const auto h = diff_histogram(luma_plane(item.image), item.image.height,
                                    item.image.width, DiffDirection::Horizontal);
      acc += h.variance;
    }
    return acc / corpus.count();
  };
  const double v_nat = mean_variance(nat);
  const double v_cg = mean_variance(cg);
  INFO("natural ", v_nat, " cg ", v_cg);
  CHECK(v_nat > v_cg);
}

TEST_CASE("png round trip is pixel exact") {
  const auto dir = fs::temp_directory_path() / "nz_corpus_png";
  fs::create_directories(dir);
  RandomStream rng(31);
  PixelImage img(3, 20, 14);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(256));
  const std::string path = (dir / "img.png").string();
  write_png(img, path);
  const auto back = read_png(path);
  CHECK(back.channels == 3);
  CHECK(back.height == 20);
  CHECK(back.width == 14);
  CHECK(back.data == img.data);
  fs::remove_all(dir);
}

TEST_CASE("ppm round trip is pixel exact at native size") {
  const auto dir = fs::temp_directory_path() / "nz_corpus_ppm";
  fs::create_directories(dir);
  RandomStream rng(32);
  PixelImage img(3, 9, 11);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(256));
  const std::string path = (dir / "img.ppm").string();
  write_ppm(img, path);
  const auto back = read_pnm(path);
  CHECK(back.data == img.data);
  fs::remove_all(dir);
}

TEST_CASE("grayscale pgm loads as three identical channels") {
  const auto dir = fs::temp_directory_path() / "nz_corpus_pgm";
  fs::create_directories(dir);
  const std::string path = (dir / "img.pgm").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n4 2\n255\n";
    const std::uint8_t px[8] = {0, 50, 100, 150, 200, 250, 25, 75};
    out.write(reinterpret_cast<const char*>(px), 8);
  }
  const auto img = read_pnm(path);
  CHECK(img.channels == 3);
  CHECK(img.height == 2);
  CHECK(img.width == 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(img.at(0, y, x) == img.at(1, y, x));
      CHECK(img.at(1, y, x) == img.at(2, y, x));
    }
  CHECK(img.at(0, 0, 1) == 50);
  fs::remove_all(dir);
}

TEST_CASE("bilinear resize keeps constants constant") {
  PixelImage img(3, 8, 8);
  std::fill(img.data.begin(), img.data.end(), 123);
  const auto out = resize_bilinear(img, 16, 16);
  CHECK(out.height == 16);
  for (std::uint8_t v : out.data) CHECK(v == 123);
}

TEST_CASE("corpus save/load round trip preserves images, ids and labels") {
  const auto dir = fs::temp_directory_path() / "nz_corpus_rt";
  fs::remove_all(dir);
  const auto corpus = synth_corpus(SynthKind::CgLike, 6, 24, 99);
  save_corpus(corpus, dir.string());
  const auto back = load_corpus(dir.string(), 24);
  REQUIRE(back.count() == corpus.count());
  CHECK(back.skipped.empty());
  for (std::size_t i = 0; i < corpus.count(); ++i) {
    CHECK(back.items[i].id == corpus.items[i].id);
    CHECK(back.items[i].label == corpus.items[i].label);
    CHECK(back.items[i].image.data == corpus.items[i].image.data);
  }
  CHECK(back.content_hash() == corpus.content_hash());
  fs::remove_all(dir);
}

TEST_CASE("loader resizes to the requested size") {
  const auto dir = fs::temp_directory_path() / "nz_corpus_rs";
  fs::remove_all(dir);
  const auto corpus = synth_corpus(SynthKind::NaturalLike, 3, 32, 55);
  save_corpus(corpus, dir.string());
  const auto back = load_corpus(dir.string(), 16);
  for (const auto& item : back.items) {
    CHECK(item.image.height == 16);
    CHECK(item.image.width == 16);
  }
  fs::remove_all(dir);
}

TEST_CASE("loader skips unreadable entries and keeps counting") {
  const auto dir = fs::temp_directory_path() / "nz_corpus_skip";
  fs::remove_all(dir);
  const auto corpus = synth_corpus(SynthKind::CgLike, 2, 16, 5);
  save_corpus(corpus, dir.string());
  // corrupt one file, reference one missing file
  {
    std::ofstream out(dir / (corpus.items[0].id + ".png"), std::ios::binary | std::ios::trunc);
    out << "not a png";
  }
  {
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    text.insert(text.rfind(']'), R"(,{"id":"ghost","label":"cg","file":"ghost.png"})");
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << text;
  }
  const auto back = load_corpus(dir.string(), 16);
  CHECK(back.count() == 1);
  CHECK(back.skipped.size() == 2);
  CHECK(back.count() + back.skipped.size() == 3);  // manifest count
  fs::remove_all(dir);
}

TEST_CASE("missing manifest raises an io error") {
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus/dir", 16), IoError);
}

TEST_CASE("clamp/denormalize mapping table") {
  CHECK(denormalize_clamped(-2.5f) == 0);
  CHECK(denormalize_clamped(-1.8f) == 0);   // (-0.8)*127.5 = -102 -> clipped to 0
  CHECK(denormalize_clamped(0.0f) == 128);  // round half up
  CHECK(denormalize_clamped(1.0f) == 255);
  CHECK(denormalize_clamped(1.8f) == 255);  // 357 -> clipped
  CHECK(denormalize_clamped(2.5f) == 255);
}

TEST_CASE("normalize then denormalize restores every in-range pixel value") {
  for (int v = 0; v < 256; ++v) {
    const float x = normalize_pixel(static_cast<std::uint8_t>(v));
    CHECK(denormalize_clamped(x) == v);
  }
}

TEST_CASE("batch/tensor conversions round trip") {
  RandomStream rng(66);
  PixelImage img(3, 16, 16);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(256));
  auto batch = batch_from_images({&img, &img});
  CHECK(batch->shape == std::vector<int>{2, 3, 16, 16});
  const auto back = image_from_tensor(*batch, 1);
  CHECK(back.data == img.data);
}

TEST_CASE("repeated synth invocations write identical corpora to disk") {
  const auto dir1 = fs::temp_directory_path() / "nz_corpus_d1";
  const auto dir2 = fs::temp_directory_path() / "nz_corpus_d2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  save_corpus(synth_corpus(SynthKind::NaturalLike, 4, 16, 123), dir1.string());
  save_corpus(synth_corpus(SynthKind::NaturalLike, 4, 16, 123), dir2.string());
  for (const auto& entry : fs::directory_iterator(dir1)) {
    const auto other = dir2 / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(hash_file(entry.path().string()) == hash_file(other.string()));
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}
