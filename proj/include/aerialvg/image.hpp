#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace aerialvg {

// Three-channel image, channel-major [3, H, W], values in [0, 1].
struct ImageRaster {
  std::size_t height = 0, width = 0;
  std::vector<double> pixels;

  static ImageRaster filled(std::size_t height, std::size_t width, double r, double g, double b);
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
};

// Binary portable pixmap (P6), 8 bits per channel.
void write_ppm(const ImageRaster& img, const std::string& path);

}  // namespace aerialvg
