#include "aerialvg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace aerialvg {

ImageRaster ImageRaster::filled(std::size_t height, std::size_t width, double r, double g, double b) {
  ImageRaster img{height, width, std::vector<double>(3 * height * width)};
  const double rgb[3] = {r, g, b};
  for (std::size_t c = 0; c < 3; ++c)
    std::fill_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(c * height * width), height * width, rgb[c]);
  return img;
}

void write_ppm(const ImageRaster& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
}

}  // namespace aerialvg
