// SPDX-License-Identifier: Apache-2.0
#include "naturalize/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "naturalize/errors.hpp"

namespace naturalize {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

PixelImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw FormatError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failure");
  }
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> interleaved;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG file: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int ch = static_cast<int>(png_get_channels(png, info));
  if (ch != 1 && ch != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unsupported PNG channel count " + std::to_string(ch) + " in " + path);
  }
  interleaved.assign(static_cast<std::size_t>(height) * width * ch, 0);
  rows.resize(height);
  for (int y = 0; y < height; ++y)
    rows[y] = interleaved.data() + static_cast<std::size_t>(y) * width * ch;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  PixelImage img(3, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = interleaved[(static_cast<std::size_t>(y) * width + x) * ch + (ch == 3 ? c : 0)];
  return img;
}

void write_png(const PixelImage& img, const std::string& path) {
  if (img.channels != 3 && img.channels != 1)
    throw DimensionError("write_png needs 1 or 3 channels, got " + std::to_string(img.channels));
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failure on " + path);
  }
  png_init_io(png, fp.get());
  // fixed encoder settings keep output bytes reproducible
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<std::size_t>(x) * img.channels + c] = img.at(c, y, x);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

int pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  in >> v;
  if (!in) throw FormatError("malformed PNM header");
  return v;
}

}  // namespace

PixelImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char p, kind;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw FormatError("unsupported PNM type in " + path + " (need binary P5 or P6)");
  const int width = pnm_token(in);
  const int height = pnm_token(in);
  const int maxval = pnm_token(in);
  if (maxval != 255) throw FormatError("PNM maxval must be 255 in " + path);
  in.get();  // single whitespace after header
  const int ch = kind == '6' ? 3 : 1;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(width) * height * ch);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw FormatError("truncated PNM payload in " + path);

  // grayscale replicates into three identical channels
  PixelImage img(3, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[(static_cast<std::size_t>(y) * width + x) * ch + (ch == 3 ? c : 0)];
  return img;
}

void write_ppm(const PixelImage& img, const std::string& path) {
  if (img.channels != 3)
    throw DimensionError("write_ppm needs 3 channels, got " + std::to_string(img.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.put(static_cast<char>(img.at(c, y, x)));
  if (!out) throw IoError("write failure on " + path);
}

PixelImage read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open " + path);
  unsigned char sig[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(sig), 2);
  probe.close();
  if (sig[0] == 0x89 && sig[1] == 'P') return read_png(path);
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return read_pnm(path);
  throw FormatError("unrecognized image format in " + path);
}

PixelImage resize_bilinear(const PixelImage& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw DimensionError("resize target must be positive");
  if (img.height == out_h && img.width == out_w) return img;
  PixelImage out(img.channels, out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    int y1 = y0 + 1;
    y0 = std::max(0, std::min(img.height - 1, y0));
    y1 = std::max(0, std::min(img.height - 1, y1));
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      int x1 = x0 + 1;
      x0 = std::max(0, std::min(img.width - 1, x0));
      x1 = std::max(0, std::min(img.width - 1, x1));
      for (int c = 0; c < img.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                         wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
        out.at(c, y, x) = static_cast<std::uint8_t>(std::max(0.0, std::min(255.0, std::floor(v + 0.5))));
      }
    }
  }
  return out;
}

std::uint8_t denormalize_clamped(float raw) {
  float x = raw;
  if (x > 1.8f) x = 1.8f;
  if (x < -1.8f) x = -1.8f;
  const double v = std::floor((static_cast<double>(x) + 1.0) * 127.5 + 0.5);  // round half up
  return static_cast<std::uint8_t>(std::max(0.0, std::min(255.0, v)));
}

TensorPtrF batch_from_images(const std::vector<const PixelImage*>& images) {
  if (images.empty()) throw ContractError("batch_from_images needs at least one image");
  const int h = images[0]->height, w = images[0]->width;
  auto t = make_tensor<float>({static_cast<int>(images.size()), 3, h, w});
  float* p = t->data.data();
  for (const PixelImage* img : images) {
    if (img->channels != 3 || img->height != h || img->width != w)
      throw DimensionError("batch_from_images: all images must be 3-channel with equal size");
    for (std::uint8_t v : img->data) *p++ = normalize_pixel(v);
  }
  return t;
}

PixelImage image_from_tensor(const Tensor<float>& t, int n) {
  int c, h, w;
  const float* base;
  if (t.ndim() == 4) {
    if (n < 0 || n >= t.shape[0]) throw DimensionError("sample index out of range");
    c = t.shape[1];
    h = t.shape[2];
    w = t.shape[3];
    base = t.data.data() + static_cast<std::size_t>(n) * c * h * w;
  } else if (t.ndim() == 3) {
    c = t.shape[0];
    h = t.shape[1];
    w = t.shape[2];
    base = t.data.data();
  } else {
    throw DimensionError("image tensor must be [3,S,S] or [N,3,S,S], got " + t.shape_str());
  }
  if (c != 3) throw DimensionError("image tensor must have 3 channels, got " + std::to_string(c));
  PixelImage img(3, h, w);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = denormalize_clamped(base[i]);
  return img;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace naturalize
