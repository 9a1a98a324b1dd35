#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcvamd/image.hpp"

namespace gcvamd {

/// 8-bit interleaved image (1, 3 or 4 channels).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, channel-interleaved

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Decodes a PNG or JPEG file, chosen by its signature. Throws DecodeError.
Image8 read_image(const std::string& path);
void write_png(const Image8& image, const std::string& path);

/// Sample `n` of a batch with values in [0, 1], rounded to 8 bits.
Image8 to_image8(const ImageBatch& batch, Eigen::Index n);

/// Tiles images into a grid: rows[r] holds the images of grid row r, all with
/// the same shape and count.
Image8 make_grid(const std::vector<ImageBatch>& rows);

}  // namespace gcvamd
