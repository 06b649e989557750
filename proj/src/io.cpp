#include "ppsvae/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ppsvae/errors.hpp"

namespace ppsvae {

namespace fs = std::filesystem;

Rgb8Image::Rgb8Image(int w, int h, std::array<std::uint8_t, 3> fill) : width(w), height(h) {
  require(w >= 1 && h >= 1, "image dimensions must be positive");
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
}

std::array<std::uint8_t, 3> Rgb8Image::get(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Rgb8Image::set(int x, int y, std::array<std::uint8_t, 3> c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  std::copy(c.begin(), c.end(), pixels.begin() + i);
}

void write_png(const Rgb8Image& img, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw UsageError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw UsageError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

Rgb8Image read_png(const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) throw IngestionError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw IngestionError("corrupt PNG " + path.string());
  }
  png_init_io(png, f);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  Rgb8Image img(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
  for (int y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(f);
  return img;
}

void write_npy(const Tensor& t, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ostringstream shape;
  shape << "(";
  for (std::size_t i = 0; i < t.rank(); ++i) shape << t.dim(i) << (t.rank() == 1 || i + 1 < t.rank() ? "," : "");
  shape << ")";
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape.str() + ", }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out << header;
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_npy(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0 || magic[6] != 1) throw IngestionError("not a v1 npy file: " + path.string());
  const int lo = in.get(), hi = in.get();
  std::string header(static_cast<std::size_t>(lo | (hi << 8)), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));
  if (header.find("'<f8'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos)
    throw IngestionError("unsupported npy layout in " + path.string());
  const auto open = header.find('(', header.find("'shape'")), close = header.find(')', open);
  Shape shape;
  std::string dims = header.substr(open + 1, close - open - 1);
  std::replace(dims.begin(), dims.end(), ',', ' ');
  std::istringstream ds(dims);
  for (int d; ds >> d;) shape.push_back(d);
  std::vector<double> data(shape_numel(shape));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw IngestionError("truncated npy data in " + path.string());
  return Tensor(shape, std::move(data));
}

std::string git_blob_sha1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string prefix = "blob " + std::to_string(bytes.size());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, prefix.c_str(), prefix.size() + 1);  // includes the NUL
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

namespace {
std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }
}  // namespace

void blit_image(Rgb8Image& canvas, const Tensor& image, int x0, int y0, int scale) {
  require(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3), "blit_image expects 1 or 3 channels");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::array<std::uint8_t, 3> px{};
      for (int k = 0; k < 3; ++k)
        px[static_cast<std::size_t>(k)] = to_byte(image[(static_cast<std::size_t>(c == 1 ? 0 : k) * h + y) * w + x]);
      for (int sy = 0; sy < scale; ++sy)
        for (int sx = 0; sx < scale; ++sx) canvas.set(x0 + x * scale + sx, y0 + y * scale + sy, px);
    }
}

void blit_mask(Rgb8Image& canvas, const Tensor& mask, int x0, int y0, int scale) {
  require(mask.rank() == 2, "blit_mask expects an H x W mask");
  const int h = mask.dim(0), w = mask.dim(1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto col = mask[static_cast<std::size_t>(y) * w + x] != 0.0 ? kMaskOn : kMaskOff;
      for (int sy = 0; sy < scale; ++sy)
        for (int sx = 0; sx < scale; ++sx) canvas.set(x0 + x * scale + sx, y0 + y * scale + sy, col);
    }
}

void draw_context_circle(Rgb8Image& canvas, int cx, int cy, int radius) {
  double lum = 0.0;
  int count = 0;
  for (int y = cy - radius; y <= cy + radius; ++y)
    for (int x = cx - radius; x <= cx + radius; ++x) {
      if (x < 0 || y < 0 || x >= canvas.width || y >= canvas.height) continue;
      const auto p = canvas.get(x, y);
      lum += (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
      ++count;
    }
  const bool bright = count > 0 && lum / count > 0.5;
  const std::array<std::uint8_t, 3> color = bright ? std::array<std::uint8_t, 3>{0, 0, 255}
                                                   : std::array<std::uint8_t, 3>{255, 255, 0};
  const double r_in = radius - 0.75, r_out = radius + 0.25;
  for (int y = cy - radius - 1; y <= cy + radius + 1; ++y)
    for (int x = cx - radius - 1; x <= cx + radius + 1; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      if (d >= r_in && d <= r_out) canvas.set(x, y, color);
    }
}

}  // namespace ppsvae
