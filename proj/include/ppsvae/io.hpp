#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppsvae/tensor.hpp"

namespace ppsvae {

/// 8-bit RGB raster, row-major.
struct Rgb8Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  Rgb8Image() = default;
  Rgb8Image(int w, int h, std::array<std::uint8_t, 3> fill = {255, 255, 255});
  std::array<std::uint8_t, 3> get(int x, int y) const;
  void set(int x, int y, std::array<std::uint8_t, 3> c);
};

void write_png(const Rgb8Image& img, const std::filesystem::path& path);
Rgb8Image read_png(const std::filesystem::path& path);

/// Little-endian float64 .npy, C order.
void write_npy(const Tensor& t, const std::filesystem::path& path);
Tensor read_npy(const std::filesystem::path& path);

/// Hex SHA-1 of "blob <size>\0" + contents, as git computes object ids.
std::string git_blob_sha1(const std::filesystem::path& path);

// ---- rendering ----

inline constexpr std::array<std::uint8_t, 3> kMaskOn = {253, 231, 37};
inline constexpr std::array<std::uint8_t, 3> kMaskOff = {68, 1, 84};

/// Pastes a C x H x W image (C = 1 or 3), clamped to [0, 1], scaled by `scale`.
void blit_image(Rgb8Image& canvas, const Tensor& image, int x0, int y0, int scale);
/// Pastes an H x W binary mask in the two mask colors.
void blit_mask(Rgb8Image& canvas, const Tensor& mask, int x0, int y0, int scale);
/// Circle outline centered on a tile pixel, in the color contrasting most with
/// the canvas under it.
void draw_context_circle(Rgb8Image& canvas, int cx, int cy, int radius);

}  // namespace ppsvae
