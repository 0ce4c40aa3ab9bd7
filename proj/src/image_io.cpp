#include "stam/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "stam/errors.hpp"

namespace stam {

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image read_png_gray(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("missing image file: " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError("corrupt image " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("corrupt image " + path.string() + ": " + msg);
  }
  Image out(img.height, img.width);
  for (Eigen::Index y = 0; y < out.rows(); ++y) {
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      out(y, x) = buffer[static_cast<std::size_t>(y * out.cols() + x)] / 255.0;
    }
  }
  return out;
}

void write_png_gray(const std::filesystem::path& path, const Image& image) {
  std::vector<png_byte> buffer(static_cast<std::size_t>(image.size()));
  for (Eigen::Index y = 0; y < image.rows(); ++y) {
    for (Eigen::Index x = 0; x < image.cols(); ++x) {
      buffer[static_cast<std::size_t>(y * image.cols() + x)] = quantize(image(y, x));
    }
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.cols());
  img.height = static_cast<png_uint_32>(image.rows());
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw FormatError("cannot write image " + path.string() + ": " + img.message);
  }
}

}  // namespace stam
