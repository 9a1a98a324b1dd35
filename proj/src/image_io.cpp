#include "gcvamd/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "gcvamd/errors.hpp"

namespace gcvamd {

namespace {

Image8 read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DecodeError("cannot decode PNG " + path + ": " + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw DecodeError("cannot decode PNG " + path + ": " + message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

Image8 read_jpeg(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DecodeError("cannot open " + path);
  jpeg_decompress_struct info;
  JpegErrorManager err;
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Image8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    throw DecodeError("cannot decode JPEG " + path + ": " + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file.get());
  jpeg_read_header(&info, TRUE);
  if (info.num_components != 1) info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  out.height = static_cast<int>(info.output_height);
  out.width = static_cast<int>(info.output_width);
  out.channels = info.output_components;
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * out.channels);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(info.output_scanline) * out.width * out.channels;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return out;
}

}  // namespace

Image8 read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open " + path);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  throw DecodeError("unrecognized image format: " + path);
}

void write_png(const Image8& image, const std::string& path) {
  if (image.channels != 1 && image.channels != 3 && image.channels != 4)
    throw std::invalid_argument("PNG output needs 1, 3 or 4 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels)
    throw std::invalid_argument("pixel buffer does not match image size");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path + ": " + png.message);
}

Image8 to_image8(const ImageBatch& batch, Eigen::Index n) {
  if (n < 0 || n >= batch.count()) throw std::invalid_argument("image index out of range");
  Image8 out{batch.shape.h, batch.shape.w, batch.shape.c, {}};
  out.pixels.resize(static_cast<std::size_t>(batch.shape.size()));
  for (Eigen::Index i = 0; i < batch.shape.size(); ++i) {
    const double v = std::clamp(batch.data(i, n), 0.0, 1.0);
    out.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Image8 make_grid(const std::vector<ImageBatch>& rows) {
  if (rows.empty() || rows.front().count() == 0) throw std::invalid_argument("grid needs at least one image");
  const nn::Shape3 shape = rows.front().shape;
  const auto cols = rows.front().count();
  for (const auto& r : rows)
    if (!(r.shape == shape) || r.count() != cols) throw std::invalid_argument("grid rows must share shape and count");
  Image8 grid{shape.h * static_cast<int>(rows.size()), shape.w * static_cast<int>(cols), shape.c, {}};
  grid.pixels.resize(static_cast<std::size_t>(grid.height) * grid.width * grid.channels);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Eigen::Index col = 0; col < cols; ++col) {
      const Image8 tile = to_image8(rows[r], col);
      for (int y = 0; y < shape.h; ++y) {
        const auto gy = static_cast<std::size_t>(static_cast<int>(r) * shape.h + y);
        const auto gx = static_cast<std::size_t>(col * shape.w);
        std::copy_n(tile.pixels.begin() + static_cast<std::ptrdiff_t>(y) * shape.w * shape.c,
                    shape.w * shape.c,
                    grid.pixels.begin() + static_cast<std::ptrdiff_t>((gy * grid.width + gx) * shape.c));
      }
    }
  }
  return grid;
}

}  // namespace gcvamd
