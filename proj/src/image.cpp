#include "sapl/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace sapl {
namespace {

cv::Mat to_bgr_mat(const RgbImage& img) {
  if (img.channels() != 3) throw std::invalid_argument("expected 3-channel image");
  cv::Mat rgb(img.height(), img.width(), CV_8UC3,
              const_cast<std::uint8_t*>(img.data().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

RgbImage from_bgr_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(rgb.rows, rgb.cols, 3);
  for (int y = 0; y < rgb.rows; ++y) {
    std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<size_t>(rgb.cols) * 3,
                out.data().begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
  }
  return out;
}

RgbImage mat_to_rgb(const cv::Mat& raw, const std::string& what) {
  if (raw.empty()) throw ImageIoError("cannot decode image: " + what);
  cv::Mat m = raw;
  if (m.depth() == CV_16U) m.convertTo(m, CV_8U, 1.0 / 257.0);
  switch (m.channels()) {
    case 1: {
      cv::Mat bgr;
      cv::cvtColor(m, bgr, cv::COLOR_GRAY2BGR);
      return from_bgr_mat(bgr);
    }
    case 3:
      return from_bgr_mat(m);
    case 4: {
      cv::Mat bgr;
      cv::cvtColor(m, bgr, cv::COLOR_BGRA2BGR);
      return from_bgr_mat(bgr);
    }
    default:
      throw ImageIoError("unsupported channel count in " + what);
  }
}

template <typename T>
Image<T> resize_impl(const Image<T>& src, int height, int width) {
  if (src.empty()) throw std::invalid_argument("resize_bilinear: empty source");
  Image<T> out(height, width, src.channels());
  const double sy = static_cast<double>(src.height()) / height;
  const double sx = static_cast<double>(src.width()) / width;
  const int ch = src.channels();
  std::vector<int> x0(width), x1(width);
  std::vector<double> fx(width);
  for (int x = 0; x < width; ++x) {
    double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
    x0[x] = static_cast<int>(std::floor(u));
    x1[x] = std::min(x0[x] + 1, src.width() - 1);
    fx[x] = u - x0[x];
  }
  for (int y = 0; y < height; ++y) {
    double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    int y0 = static_cast<int>(std::floor(v));
    int y1 = std::min(y0 + 1, src.height() - 1);
    double fy = v - y0;
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < ch; ++c) {
        double top = src(y0, x0[x], c) * (1 - fx[x]) + src(y0, x1[x], c) * fx[x];
        double bot = src(y1, x0[x], c) * (1 - fx[x]) + src(y1, x1[x], c) * fx[x];
        out(y, x, c) = static_cast<T>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  return mat_to_rgb(raw, path.string());
}

Mask read_mask(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (raw.empty()) throw ImageIoError("cannot decode mask: " + path.string());
  Mask out(raw.rows, raw.cols, 1);
  for (int y = 0; y < raw.rows; ++y) {
    std::copy_n(raw.ptr<std::uint8_t>(y), raw.cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(y) * raw.cols);
  }
  return out;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  if (!cv::imwrite(path.string(), to_bgr_mat(img))) {
    throw ImageIoError("cannot write " + path.string());
  }
}

void write_gray_png(const std::filesystem::path& path, const Mask& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC1, const_cast<std::uint8_t*>(img.data().data()));
  if (!cv::imwrite(path.string(), m)) throw ImageIoError("cannot write " + path.string());
}

void write_gray16_png(const std::filesystem::path& path, const Image<std::uint16_t>& img) {
  cv::Mat m(img.height(), img.width(), CV_16UC1, const_cast<std::uint16_t*>(img.data().data()));
  if (!cv::imwrite(path.string(), m)) throw ImageIoError("cannot write " + path.string());
}

Image<std::uint16_t> read_gray16(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty() || raw.channels() != 1) throw ImageIoError("cannot decode " + path.string());
  if (raw.depth() != CV_16U) raw.convertTo(raw, CV_16U, 257.0);
  Image<std::uint16_t> out(raw.rows, raw.cols, 1);
  for (int y = 0; y < raw.rows; ++y) {
    std::copy_n(raw.ptr<std::uint16_t>(y), raw.cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(y) * raw.cols);
  }
  return out;
}

std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality) {
  std::vector<std::uint8_t> buf;
  std::vector<int> params{cv::IMWRITE_JPEG_QUALITY, quality};
  if (!cv::imencode(".jpg", to_bgr_mat(img), buf, params)) {
    throw ImageIoError("jpeg encoding failed");
  }
  return buf;
}

RgbImage decode_image(const std::vector<std::uint8_t>& bytes) {
  cv::Mat raw = cv::imdecode(bytes, cv::IMREAD_COLOR);
  return mat_to_rgb(raw, "<memory buffer>");
}

RgbImage gaussian_blur(const RgbImage& img, int radius) {
  if (radius <= 0) return img;
  cv::Mat src(img.height(), img.width(), CV_8UC3, const_cast<std::uint8_t*>(img.data().data()));
  cv::Mat dst;
  cv::GaussianBlur(src, dst, cv::Size(2 * radius + 1, 2 * radius + 1), 0, 0, cv::BORDER_REFLECT_101);
  RgbImage out(img.height(), img.width(), 3);
  for (int y = 0; y < dst.rows; ++y) {
    std::copy_n(dst.ptr<std::uint8_t>(y), static_cast<size_t>(dst.cols) * 3,
                out.data().begin() + static_cast<std::ptrdiff_t>(y) * dst.cols * 3);
  }
  return out;
}

RealGrid to_gray(const RgbImage& img) {
  RealGrid g(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      g(y, x) = 0.299 * img(y, x, 0) + 0.587 * img(y, x, 1) + 0.114 * img(y, x, 2);
    }
  }
  return g;
}

RealGrid resize_bilinear(const RealGrid& src, int height, int width) {
  return resize_impl(src, height, width);
}

Image<float> resize_bilinear(const Image<float>& src, int height, int width) {
  return resize_impl(src, height, width);
}

}  // namespace sapl
