#include "kmaml/tasks/raster_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError(path.string() + ": truncated KMR1 header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

Raster read_kmr1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, "KMR1", 4) != 0) {
    throw FormatError(path.string() + ": missing KMR1 magic");
  }
  Raster r;
  r.height = get_u32(is, path);
  r.width = get_u32(is, path);
  r.channels = get_u32(is, path);
  if (r.height == 0 || r.width == 0) throw FormatError(path.string() + ": zero raster dimension");
  if (r.channels != 1 && r.channels != 2) {
    throw FormatError(path.string() + ": channels must be 1 or 2, got " + std::to_string(r.channels));
  }
  const std::size_t n = r.height * r.width * r.channels;
  r.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = get_u32(is, path);
    r.data[i] = std::bit_cast<float>(bits);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after raster");
  return r;
}

void write_kmr1(const std::filesystem::path& path, const Raster& raster) {
  if (raster.data.size() != raster.height * raster.width * raster.channels) {
    throw DimensionError("write_kmr1: data size does not match height*width*channels");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("KMR1", 4);
  put_u32(os, static_cast<std::uint32_t>(raster.height));
  put_u32(os, static_cast<std::uint32_t>(raster.width));
  put_u32(os, static_cast<std::uint32_t>(raster.channels));
  for (float v : raster.data) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw IoError("write failed for " + path.string());
}

Raster read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }

  png_uint_32 width = 0, height = 0;
  int depth = 0, color = 0;
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  volatile bool unsupported = false;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &depth, &color, nullptr, nullptr, nullptr);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
    unsupported = true;
  } else {
    const std::size_t bytes = depth / 8;
    pixels.resize(static_cast<std::size_t>(width) * height * bytes);
    rows.resize(height);
    for (png_uint_32 r = 0; r < height; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * width * bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (unsupported) {
    throw FormatError(path.string() + ": only 8/16-bit grayscale PNG is supported (bit depth " +
                      std::to_string(depth) + ", color type " + std::to_string(color) + ")");
  }

  Raster out;
  out.height = height;
  out.width = width;
  out.channels = 1;
  out.data.resize(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (depth == 8) {
      out.data[i] = static_cast<float>(pixels[i]) / 255.0f;
    } else {
      // PNG stores 16-bit samples big-endian
      const unsigned v = (static_cast<unsigned>(pixels[2 * i]) << 8) | pixels[2 * i + 1];
      out.data[i] = static_cast<float>(v) / 65535.0f;
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<double>& values, int bit_depth) {
  if (values.size() != height * width) throw DimensionError("write_png: value count does not match height*width");
  if (bit_depth != 8 && bit_depth != 16) throw ParameterError("write_png: bit depth must be 8 or 16");
  const std::size_t bytes = static_cast<std::size_t>(bit_depth) / 8;
  std::vector<png_byte> pixels(values.size() * bytes);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    if (bytes == 1) {
      pixels[i] = static_cast<png_byte>(std::lround(v * 255.0));
    } else {
      const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
      pixels[2 * i] = static_cast<png_byte>(q >> 8);
      pixels[2 * i + 1] = static_cast<png_byte>(q & 0xFF);
    }
  }
  std::vector<png_bytep> rows(height);
  for (std::size_t r = 0; r < height; ++r) rows[r] = pixels.data() + r * width * bytes;

  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ComplexImage load_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 4> magic{};
  is.read(reinterpret_cast<char*>(magic.data()), 4);
  is.close();
  Raster r;
  if (std::memcmp(magic.data(), "KMR1", 4) == 0) {
    r = read_kmr1(path);
  } else if (magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G') {
    r = read_png(path);
  } else {
    throw FormatError(path.string() + ": neither a KMR1 raster nor a PNG");
  }

  ComplexImage img(r.height, r.width);
  const std::size_t n = r.height * r.width;
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    img.real[i] = r.data[i];
    if (r.channels == 2) img.imag[i] = r.data[n + i];
    if (!std::isfinite(img.real[i]) || !std::isfinite(img.imag[i])) {
      throw FormatError(path.string() + ": non-finite pixel value");
    }
    peak = std::max(peak, std::hypot(img.real[i], img.imag[i]));
  }
  if (peak > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      img.real[i] /= peak;
      img.imag[i] /= peak;
    }
  }
  return img;
}

void save_image(const std::filesystem::path& path, const ComplexImage& image) {
  const bool complex = std::any_of(image.imag.begin(), image.imag.end(), [](double v) { return v != 0.0; });
  Raster r;
  r.height = image.height;
  r.width = image.width;
  r.channels = complex ? 2 : 1;
  r.data.reserve(image.size() * r.channels);
  for (double v : image.real) r.data.push_back(static_cast<float>(v));
  if (complex) {
    for (double v : image.imag) r.data.push_back(static_cast<float>(v));
  }
  write_kmr1(path, r);
}

void save_mask(const std::filesystem::path& path, const SamplingMask& mask) {
  Raster r;
  r.height = mask.height;
  r.width = mask.width;
  r.channels = 1;
  r.data.reserve(mask.kept.size());
  for (auto k : mask.kept) r.data.push_back(k ? 1.0f : 0.0f);
  write_kmr1(path, r);
}

}  // namespace kmaml
