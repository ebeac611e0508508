#include "histrec/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace histrec {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is) {
  std::uint32_t u = get_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

int read_pnm_token(std::istream& is) {
  // Skips whitespace and '#' comments.
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

}  // namespace

void write_svf(const std::string& path, const SvfField& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_svf: cannot open " + path);
  os.write("SVF1", 4);
  put_u32(os, static_cast<std::uint32_t>(v.height));
  put_u32(os, static_cast<std::uint32_t>(v.width));
  put_u32(os, 2);
  put_f64(os, v.spacing);
  for (double x : v.data) put_f32(os, static_cast<float>(x));
  if (!os) throw std::runtime_error("write_svf: write failed for " + path);
}

SvfField read_svf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_svf: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SVF1", 4) != 0)
    throw std::runtime_error("read_svf: bad magic in " + path);
  SvfField v;
  v.height = static_cast<int>(get_u32(is));
  v.width = static_cast<int>(get_u32(is));
  std::uint32_t channels = get_u32(is);
  v.spacing = get_f64(is);
  if (channels != 2 || v.height <= 0 || v.width <= 0 || v.spacing <= 0.0)
    throw std::runtime_error("read_svf: bad header in " + path);
  v.data.resize(static_cast<size_t>(v.height) * v.width * 2);
  for (double& x : v.data) x = get_f32(is);
  if (!is) throw std::runtime_error("read_svf: truncated file " + path);
  return v;
}

void write_pgm(const std::string& path, const ImageSection& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    double v = std::clamp(img.pixels[i], 0.0, 255.0);
    buf[i] = static_cast<unsigned char>(std::lround(v));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

ImageSection read_pgm(const std::string& path, bool mask_from_pixels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm: cannot open " + path);
  char m0 = static_cast<char>(is.get());
  char m1 = static_cast<char>(is.get());
  if (m0 != 'P' || m1 != '5') throw std::runtime_error("read_pgm: not a binary PGM: " + path);
  int w = read_pnm_token(is);
  int h = read_pnm_token(is);
  int maxval = read_pnm_token(is);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("read_pgm: bad header in " + path);
  ImageSection img = ImageSection::blank(h, w);
  std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw std::runtime_error("read_pgm: truncated file " + path);
  for (size_t i = 0; i < buf.size(); ++i) {
    img.pixels[i] = buf[i];
    if (mask_from_pixels) img.mask[i] = buf[i] > 0 ? 1 : 0;
  }
  return img;
}

void write_mask_pgm(const std::string& path, const ImageSection& img) {
  ImageSection m = img;
  for (size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = img.mask[i] ? 255.0 : 0.0;
  write_pgm(path, m);
}

void read_mask_pgm(const std::string& path, ImageSection& img) {
  ImageSection m = read_pgm(path);
  if (m.height != img.height || m.width != img.width)
    throw std::runtime_error("read_mask_pgm: mask dims mismatch image: " + path);
  for (size_t i = 0; i < m.pixels.size(); ++i) img.mask[i] = m.pixels[i] > 127.0 ? 1 : 0;
}

}  // namespace histrec
