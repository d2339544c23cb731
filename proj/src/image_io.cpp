#include "wavedg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace wavedg {

namespace {

struct Raw8 {
  int width = 0, height = 0, channels = 0;  // channels 1 or 3
  std::vector<unsigned char> pixels;        // interleaved
};

std::string ext_of(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string e = path.substr(dot + 1);
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("image " + path + ": " + why);
}

// --- PNM ---------------------------------------------------------------

int pnm_next_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments.
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    if (!in) fail(path, "truncated header");
  }
  int v = 0;
  in >> v;
  if (!in) fail(path, "truncated header");
  return v;
}

Raw8 load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::string magic;
  in >> magic;
  const bool gray = magic == "P2" || magic == "P5";
  const bool color = magic == "P3" || magic == "P6";
  if (!gray && !color) fail(path, "unsupported PNM magic '" + magic + "'");
  const bool ascii = magic == "P2" || magic == "P3";

  Raw8 raw;
  raw.width = pnm_next_int(in, path);
  raw.height = pnm_next_int(in, path);
  const int maxval = pnm_next_int(in, path);
  if (raw.width <= 0 || raw.height <= 0) fail(path, "bad dimensions");
  if (maxval <= 0 || maxval > 255) fail(path, "only 8-bit PNM supported");
  raw.channels = color ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(raw.width) * raw.height * raw.channels;
  raw.pixels.resize(n);
  if (ascii) {
    for (std::size_t i = 0; i < n; ++i) {
      const int v = pnm_next_int(in, path);
      raw.pixels[i] = static_cast<unsigned char>(255 * v / maxval);
    }
  } else {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(raw.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) fail(path, "truncated pixel data");
    if (maxval != 255)
      for (auto& v : raw.pixels) v = static_cast<unsigned char>(255 * v / maxval);
  }
  return raw;
}

void save_pnm(const std::string& path, const Raw8& raw) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot write");
  out << (raw.channels == 3 ? "P6" : "P5") << "\n"
      << raw.width << " " << raw.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raw.pixels.data()),
            static_cast<std::streamsize>(raw.pixels.size()));
  if (!out) fail(path, "write failed");
}

// --- PNG ---------------------------------------------------------------

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

Raw8 load_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(path, "cannot open");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png init failed");
  }
  std::vector<png_bytep> rows;
  Raw8 raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "png decode error");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  const int color_type = png_get_color_type(png, info);
  raw.channels = color_type == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(raw.width) * raw.channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "unsupported png layout");
  }
  raw.pixels.resize(stride * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

void save_png(const std::string& path, const Raw8& raw) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(path, "cannot write");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "png encode error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, raw.width, raw.height, 8,
               raw.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(raw.width) * raw.channels;
  for (int y = 0; y < raw.height; ++y)
    png_write_row(png, const_cast<png_bytep>(raw.pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// --- Conversions ---------------------------------------------------------

Raw8 load_any(const std::string& path) {
  const std::string e = ext_of(path);
  if (e == "png") return load_png(path);
  if (e == "ppm" || e == "pgm" || e == "pnm") return load_pnm(path);
  fail(path, "unsupported format '" + e + "' (png/ppm/pgm)");
}

inline unsigned char to_byte(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

Tensor load_image_rgb(const std::string& path) {
  const Raw8 raw = load_any(path);
  Tensor out({3, raw.height, raw.width});
  const std::size_t hw = static_cast<std::size_t>(raw.height) * raw.width;
  for (std::size_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) {
      const unsigned char v = raw.channels == 3 ? raw.pixels[i * 3 + c] : raw.pixels[i];
      out.values[c * hw + i] = v / 255.0;
    }
  return out;
}

Tensor load_image_gray(const std::string& path) {
  const Raw8 raw = load_any(path);
  Tensor out({raw.height, raw.width});
  const std::size_t hw = static_cast<std::size_t>(raw.height) * raw.width;
  for (std::size_t i = 0; i < hw; ++i)
    out.values[i] = (raw.channels == 3 ? raw.pixels[i * 3] : raw.pixels[i]) / 255.0;
  return out;
}

void save_image_rgb(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.shape[0] != 3)
    throw std::invalid_argument("save_image_rgb: expected {3,H,W}, got " + image.shape_str());
  Raw8 raw;
  raw.height = image.shape[1];
  raw.width = image.shape[2];
  raw.channels = 3;
  const std::size_t hw = static_cast<std::size_t>(raw.height) * raw.width;
  raw.pixels.resize(hw * 3);
  for (std::size_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) raw.pixels[i * 3 + c] = to_byte(image.values[c * hw + i]);
  const std::string e = ext_of(path);
  if (e == "png") save_png(path, raw);
  else if (e == "ppm") save_pnm(path, raw);
  else fail(path, "unsupported output format '" + e + "' (png/ppm)");
}

void save_image_gray(const std::string& path, const Tensor& image) {
  if (image.rank() != 2)
    throw std::invalid_argument("save_image_gray: expected {H,W}, got " + image.shape_str());
  Raw8 raw;
  raw.height = image.shape[0];
  raw.width = image.shape[1];
  raw.channels = 1;
  raw.pixels.resize(image.values.size());
  for (std::size_t i = 0; i < image.values.size(); ++i) raw.pixels[i] = to_byte(image.values[i]);
  const std::string e = ext_of(path);
  if (e == "png") save_png(path, raw);
  else if (e == "pgm") save_pnm(path, raw);
  else fail(path, "unsupported output format '" + e + "' (png/pgm)");
}

}  // namespace wavedg
