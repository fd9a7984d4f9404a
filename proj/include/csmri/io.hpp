#pragma once

// Binary interchange formats (little-endian):
//   complex grid: "CSKS-V1\0" (k-space) or "CSIM-V1\0" (image), u32 height, u32 width,
//                 height*width pairs of f32 (real, imag), row-major
//   mask:         "CSMK-V1\0", u32 height, u32 width, height*width bytes in {0, 1}
// plus 8-bit grayscale PNG views of magnitudes.

#include <png.h>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include "csmri/dccnn.hpp"

namespace csmri {

inline constexpr std::array<char, 8> kKSpaceMagic{'C', 'S', 'K', 'S', '-', 'V', '1', '\0'};
inline constexpr std::array<char, 8> kImageMagic{'C', 'S', 'I', 'M', '-', 'V', '1', '\0'};
inline constexpr std::array<char, 8> kMaskMagic{'C', 'S', 'M', 'K', '-', 'V', '1', '\0'};

template <class Domain>
constexpr const std::array<char, 8>& magic_for() {
  if constexpr (std::is_same_v<Domain, FourierDomain>)
    return kKSpaceMagic;
  else
    return kImageMagic;
}

namespace detail {

inline std::string magic_name(const std::array<char, 8>& m) { return std::string(m.data(), 7) + "\\0"; }

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t le_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

// Validates magic and dimensions, returns (height, width); payload starts at byte 16.
inline std::pair<std::uint32_t, std::uint32_t> read_header(const std::vector<unsigned char>& bytes,
                                                           const std::array<char, 8>& magic,
                                                           std::uint64_t element_bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), magic.data(), 8) != 0)
    throw FormatError("bad magic, expected \"" + magic_name(magic) + "\"", 0);
  if (bytes.size() < 16) throw FormatError("truncated header", bytes.size());
  const auto h = le_u32(&bytes[8]), w = le_u32(&bytes[12]);
  const std::uint64_t expected = 16 + std::uint64_t(h) * w * element_bytes;
  if (bytes.size() != expected)
    throw FormatError("payload of " + std::to_string(bytes.size() - 16) + " bytes does not match " +
                          std::to_string(h) + "x" + std::to_string(w) + " header (" +
                          std::to_string(expected - 16) + " bytes expected); truncated or padded file",
                      16);
  return {h, w};
}

}  // namespace detail

template <class Domain>
void save_complex(const std::string& path, const Grid<Domain>& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(magic_for<Domain>().data(), 8);
  detail::put_u32(os, std::uint32_t(g.height()));
  detail::put_u32(os, std::uint32_t(g.width()));
  for (const auto& v : g.values()) {
    detail::put_f32(os, float(v.real()));
    detail::put_f32(os, float(v.imag()));
  }
  if (!os) throw Error("failed writing " + path);
}

template <class Domain>
Grid<Domain> load_complex(const std::string& path) {
  const auto bytes = detail::read_all(path);
  const auto [h, w] = detail::read_header(bytes, magic_for<Domain>(), 8);
  Grid<Domain> g(h, w);
  const unsigned char* p = bytes.data() + 16;
  for (std::size_t i = 0; i < g.size(); ++i, p += 8)
    g[i] = {std::bit_cast<float>(detail::le_u32(p)), std::bit_cast<float>(detail::le_u32(p + 4))};
  return g;
}

inline ComplexImage load_image(const std::string& path) { return load_complex<ImageDomain>(path); }
inline KSpaceGrid load_kspace(const std::string& path) { return load_complex<FourierDomain>(path); }

/// The ACS descriptor is not stored; callers re-attach it after loading.
inline void save_mask(const std::string& path, const SamplingMask& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(kMaskMagic.data(), 8);
  detail::put_u32(os, std::uint32_t(m.height()));
  detail::put_u32(os, std::uint32_t(m.width()));
  os.write(reinterpret_cast<const char*>(m.bytes().data()), std::streamsize(m.size()));
  if (!os) throw Error("failed writing " + path);
}

inline SamplingMask load_mask(const std::string& path) {
  const auto bytes = detail::read_all(path);
  const auto [h, w] = detail::read_header(bytes, kMaskMagic, 1);
  std::vector<std::uint8_t> v(bytes.begin() + 16, bytes.end());
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] > 1) throw FormatError("mask byte is not 0 or 1", 16 + i);
  return SamplingMask(h, w, std::move(v));
}

/// 8-bit grayscale PNG of |img| scaled so that `peak` maps to 255 (values above clip).
inline void write_png(const std::string& path, const ComplexImage& img, double peak) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw Error("libpng failed writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width()), png_uint_32(img.height()), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(img.width());
  const double s = peak > 0.0 ? 255.0 / peak : 0.0;
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c)
      row[c] = png_byte(std::clamp(std::lround(std::abs(img(r, c)) * s), 0L, 255L));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline void write_mask_png(const std::string& path, const SamplingMask& m) {
  ComplexImage img(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) img[i] = m[i] ? 1.0 : 0.0;
  write_png(path, img, 1.0);
}

}  // namespace csmri
