#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sapl {

// Row-major, channel-interleaved raster.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels = 1, T fill = T{})
      : height_(height), width_(width), channels_(channels), data_(checked_size(height, width, channels), fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  size_t pixel_count() const { return static_cast<size_t>(height_) * width_; }

  T& operator()(int y, int x, int c = 0) {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }
  const T& operator()(int y, int x, int c = 0) const {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }
  template <typename U>
  bool same_extent(const Image<U>& o) const {
    return height_ == o.height() && width_ == o.width();
  }

  bool operator==(const Image& o) const = default;

 private:
  static size_t checked_size(int height, int width, int channels) {
    if (height < 0 || width < 0 || channels < 1) throw std::invalid_argument("Image: bad dimensions");
    return static_cast<size_t>(height) * width * channels;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using RgbImage = Image<std::uint8_t>;  // 3 channels, RGB order
using Mask = Image<std::uint8_t>;      // 1 channel, nonzero = set
using RealGrid = Image<double>;        // 1 channel

struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
  bool operator==(const Rect&) const = default;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decodes any format OpenCV understands; alpha is dropped, gray is expanded.
RgbImage read_rgb(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& img);
void write_gray_png(const std::filesystem::path& path, const Mask& img);
void write_gray16_png(const std::filesystem::path& path, const Image<std::uint16_t>& img);
Image<std::uint16_t> read_gray16(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality);
RgbImage decode_image(const std::vector<std::uint8_t>& bytes);

RgbImage gaussian_blur(const RgbImage& img, int radius);

// Grayscale as double in [0,255] using ITU-R BT.601 weights.
RealGrid to_gray(const RgbImage& img);

// Bilinear resampling with half-pixel centers and edge clamping.
RealGrid resize_bilinear(const RealGrid& src, int height, int width);
Image<float> resize_bilinear(const Image<float>& src, int height, int width);

}  // namespace sapl
