#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace pertrender {

/// Row-major height x width x channels image of doubles.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int row, int col, int ch = 0) const {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  double& at(int row, int col, int ch = 0) { return data[index(row, col, ch)]; }
  double at(int row, int col, int ch = 0) const { return data[index(row, col, ch)]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// 8-bit PNG (1 or 3 channels); values are clamped to [0,1] and rounded.
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

/// NumPy .npy (format 1.0, little-endian float32, C order, shape (h, w, c)).
void write_npy(const Image& image, const std::filesystem::path& path);
Image read_npy(const std::filesystem::path& path);

}  // namespace pertrender
