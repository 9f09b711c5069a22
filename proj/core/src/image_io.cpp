#include "mdepth/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

namespace mdepth {

namespace fs = std::filesystem;

namespace {

std::runtime_error io_error(const fs::path& path, const std::string& msg) {
  return std::runtime_error(path.string() + ": " + msg);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

Image read_pnm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error(path, "cannot open");
  const auto magic = pnm_token(is);
  if (magic != "P6" && magic != "P5") throw io_error(path, "not a binary PPM/PGM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(pnm_token(is));
    h = std::stoul(pnm_token(is));
    maxval = std::stoul(pnm_token(is));
  } catch (const std::exception&) {
    throw io_error(path, "bad header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw io_error(path, "bad header values");
  const std::size_t c = magic == "P6" ? 3 : 1;
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * c * bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw io_error(path, "truncated pixel data");
  Image img(c, h, w);
  const float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t j = (i * c + k) * bytes;
      const unsigned v = bytes == 2 ? (unsigned(raw[j]) << 8) | raw[j + 1] : raw[j];
      img.data[k * w * h + i] = static_cast<float>(v) * scale;
    }
  return img;
}

struct PngFile {
  FILE* fp = nullptr;
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
};

Image read_png(const fs::path& path) {
  PngFile f;
  f.fp = std::fopen(path.c_str(), "rb");
  if (!f.fp) throw io_error(path, "cannot open");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw io_error(path, "libpng init failed");
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error(path, "corrupt PNG");
  }
  png_init_io(png, f.fp);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_swap(png);  // 16-bit samples to host (little-endian) order
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t depth = png_get_bit_depth(png, info);
  const std::size_t channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * h);
  rows.resize(h);
  for (std::size_t r = 0; r < h; ++r) rows[r] = buffer.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t color_channels = channels >= 3 ? 3 : 1;
  img = Image(color_channels, h, w);
  const float scale = 1.0f / (depth == 16 ? 65535.0f : 255.0f);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < color_channels; ++k) {
        const std::size_t j = x * channels + k;
        const unsigned v = depth == 16 ? reinterpret_cast<const std::uint16_t*>(rows[r])[j] : rows[r][j];
        img.at(k, r, x) = static_cast<float>(v) * scale;
      }
  return img;
}

std::uint16_t quantize16(float v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
}

void write_pnm_raw(const fs::path& path, const char* magic, std::size_t h, std::size_t w,
                   const std::vector<std::uint16_t>& interleaved) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error(path, "cannot open for writing");
  os << magic << '\n' << w << ' ' << h << "\n65535\n";
  std::vector<unsigned char> raw(interleaved.size() * 2);
  for (std::size_t i = 0; i < interleaved.size(); ++i) {
    raw[2 * i] = static_cast<unsigned char>(interleaved[i] >> 8);
    raw[2 * i + 1] = static_cast<unsigned char>(interleaved[i] & 0xff);
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw io_error(path, "write failed");
}

}  // namespace

Image read_image(const fs::path& path, bool force_rgb) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  Image img = ext == ".png" ? read_png(path) : read_pnm(path);
  if (force_rgb && img.channels == 1) {
    Image rgb(3, img.height, img.width);
    for (std::size_t k = 0; k < 3; ++k) std::copy(img.data.begin(), img.data.end(), rgb.data.begin() + k * img.data.size());
    return rgb;
  }
  return img;
}

void write_pnm16(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw io_error(path, "PNM needs 1 or 3 channels");
  const std::size_t n = image.height * image.width;
  std::vector<std::uint16_t> inter(n * image.channels);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < image.channels; ++k) inter[i * image.channels + k] = quantize16(image.data[k * n + i]);
  write_pnm_raw(path, image.channels == 3 ? "P6" : "P5", image.height, image.width, inter);
}

void write_pgm16(const fs::path& path, const Plane<std::uint16_t>& gray) {
  write_pnm_raw(path, "P5", gray.height, gray.width, gray.data);
}

void write_png16(const fs::path& path, const Plane<std::uint16_t>& gray) {
  PngFile f;
  f.fp = std::fopen(path.c_str(), "wb");
  if (!f.fp) throw io_error(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw io_error(path, "libpng init failed");
  std::vector<unsigned char> row(gray.width * 2);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error(path, "PNG write failed");
  }
  png_init_io(png, f.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(gray.width), static_cast<png_uint_32>(gray.height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < gray.height; ++r) {
    for (std::size_t x = 0; x < gray.width; ++x) {
      const auto v = gray(r, x);
      row[2 * x] = static_cast<unsigned char>(v >> 8);
      row[2 * x + 1] = static_cast<unsigned char>(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  std::vector<T> v(image.data.begin(), image.data.end());
  return Tensor<T>::from_data({image.channels, image.height, image.width}, std::move(v));
}

template Tensor<float> image_tensor<float>(const Image&);
template Tensor<double> image_tensor<double>(const Image&);

}  // namespace mdepth
