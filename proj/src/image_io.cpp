#include "salgen/image_io.hpp"

#include <png.h>

#include <cstring>

namespace salgen {

Image8 read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ImageIoError(path + ": " + img.message);
  }
  bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageIoError(path + ": " + msg);
  }
  return out;
}

void write_png(const std::string& path, const Image8& im) {
  if (im.channels != 1 && im.channels != 3) throw ImageIoError(path + ": only gray or RGB images can be written");
  if (im.pixels.size() != static_cast<std::size_t>(im.width) * im.height * im.channels) {
    throw ImageIoError(path + ": pixel buffer size does not match dimensions");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = im.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, im.pixels.data(), 0, nullptr)) {
    throw ImageIoError(path + ": " + img.message);
  }
}

}  // namespace salgen
