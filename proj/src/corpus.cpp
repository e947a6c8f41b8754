#include "sapl/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <map>

#include "sapl/rng.hpp"

namespace fs = std::filesystem;

namespace sapl::corpus {

void validate(const Sample& s) {
  if (s.label != 0 && s.label != 1) throw std::invalid_argument(s.id + ": label must be 0 or 1");
  if (s.image.channels() != 3) throw std::invalid_argument(s.id + ": image must be RGB");
  if (s.mask) {
    if (!s.mask->same_extent(s.image)) throw std::invalid_argument(s.id + ": mask/image size mismatch");
    if (s.label == 0 && std::any_of(s.mask->data().begin(), s.mask->data().end(), [](auto v) { return v != 0; })) {
      throw std::invalid_argument(s.id + ": authentic image with non-empty mask");
    }
  }
}

PreprocessedSample preprocess(const RgbImage& image, int size) {
  if (image.empty()) throw std::invalid_argument("preprocess: empty image");
  const int h = image.height(), w = image.width();
  const double scale = double(size) / double(std::max(h, w));
  const int nh = std::clamp(int(std::lround(h * scale)), 1, size);
  const int nw = std::clamp(int(std::lround(w * scale)), 1, size);

  Image<float> src(h, w, 3);
  for (size_t i = 0; i < image.size(); ++i) src.data()[i] = float(image.data()[i]);
  const Image<float> resized = (nh == h && nw == w) ? src : resize_bilinear(src, nh, nw);

  PreprocessedSample out;
  out.frame = RgbImage(size, size, 3, 0);
  out.pixels = Image<float>(size, size, 3, 0.0f);
  for (int y = 0; y < nh; ++y) {
    for (int x = 0; x < nw; ++x) {
      for (int c = 0; c < 3; ++c) {
        const auto v = static_cast<std::uint8_t>(std::clamp(std::lround(resized(y, x, c)), 0L, 255L));
        out.frame(y, x, c) = v;
        out.pixels(y, x, c) = float(v) / 255.0f;
      }
    }
  }
  out.valid_region = Rect{0, 0, nh, nw};
  out.scale_factor = scale;
  out.source_height = h;
  out.source_width = w;
  return out;
}

Layout parse_layout(const std::string& name) {
  static const std::map<std::string, Layout> table{
      {"casia", Layout::casia},     {"columbia", Layout::columbia}, {"coverage", Layout::coverage},
      {"imd2020", Layout::imd2020}, {"nist16", Layout::nist16},     {"synthetic", Layout::synthetic}};
  auto it = table.find(name);
  if (it == table.end()) throw std::invalid_argument("unknown dataset layout: " + name);
  return it->second;
}

std::string to_string(Layout layout) {
  switch (layout) {
    case Layout::casia: return "casia";
    case Layout::columbia: return "columbia";
    case Layout::coverage: return "coverage";
    case Layout::imd2020: return "imd2020";
    case Layout::nist16: return "nist16";
    case Layout::synthetic: return "synthetic";
  }
  return "?";
}

namespace {

struct LayoutDirs {
  std::vector<std::string> authentic;
  std::vector<std::string> manipulated;
  std::vector<std::string> masks;
  bool manipulated_only = false;
};

// Canonical names first, then the benchmark's native directory names.
LayoutDirs dirs_for(Layout layout) {
  switch (layout) {
    case Layout::casia:
      return {{"authentic", "Au"}, {"manipulated", "Tp"}, {"masks", "Gt"}, false};
    case Layout::columbia:
      return {{"authentic", "4cam_auth"}, {"manipulated", "4cam_splc"}, {"masks", "edgemask"}, false};
    case Layout::coverage:
      return {{"authentic", "real"}, {"manipulated", "fake"}, {"masks", "mask"}, false};
    case Layout::imd2020:
      return {{"authentic", "real"}, {"manipulated", "fake"}, {"masks", "mask"}, false};
    case Layout::nist16:
      return {{}, {"manipulated", "probe"}, {"masks", "mask"}, true};
    case Layout::synthetic:
      return {{"authentic"}, {"manipulated"}, {"masks"}, false};
  }
  return {};
}

std::optional<fs::path> first_existing(const fs::path& root, const std::vector<std::string>& names) {
  for (const auto& n : names) {
    if (fs::is_directory(root / n)) return root / n;
  }
  return std::nullopt;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

RgbImage read_or_throw(const fs::path& p) {
  try {
    return read_rgb(p);
  } catch (const ImageIoError&) {
    throw DatasetError("unreadable image file: " + p.string());
  }
}

}  // namespace

Dataset load_dataset(const fs::path& root, Layout layout, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root does not exist: " + root.string());
  const LayoutDirs dirs = dirs_for(layout);
  Dataset ds;

  if (!dirs.manipulated_only) {
    if (auto dir = first_existing(root, dirs.authentic)) {
      for (const auto& p : list_images(*dir)) {
        Sample s;
        s.image = read_or_throw(p);
        s.label = 0;
        s.id = p.stem().string();
        ds.samples.push_back(std::move(s));
      }
    }
  }

  const auto mask_dir = first_existing(root, dirs.masks);
  if (auto dir = first_existing(root, dirs.manipulated)) {
    for (const auto& p : list_images(*dir)) {
      Sample s;
      s.image = read_or_throw(p);
      s.label = 1;
      s.id = p.stem().string();
      std::optional<fs::path> mask_path;
      if (mask_dir) {
        for (const char* ext : {".png", ".jpg", ".bmp", ".tif"}) {
          fs::path candidate = *mask_dir / (s.id + options.mask_suffix + ext);
          if (fs::exists(candidate)) {
            mask_path = candidate;
            break;
          }
        }
      }
      if (mask_path) {
        Mask m;
        try {
          m = read_mask(*mask_path);
        } catch (const ImageIoError&) {
          throw DatasetError("unreadable mask file: " + mask_path->string());
        }
        if (!m.same_extent(s.image)) {
          throw DatasetError("mask " + mask_path->string() + " has different dimensions from image " +
                             p.string());
        }
        s.mask = std::move(m);
      } else {
        ds.warnings.push_back("no mask for manipulated image " + p.string());
      }
      ds.samples.push_back(std::move(s));
    }
  }

  if (ds.samples.empty()) throw DatasetError("no images found under " + root.string());
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  return ds;
}

void write_dataset(const fs::path& root, const std::vector<Sample>& samples) {
  fs::create_directories(root / "authentic");
  fs::create_directories(root / "manipulated");
  fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    if (s.label == 0) {
      write_rgb_png(root / "authentic" / (s.id + ".png"), s.image);
    } else {
      write_rgb_png(root / "manipulated" / (s.id + ".png"), s.image);
      if (s.mask) write_gray_png(root / "masks" / (s.id + "_gt.png"), *s.mask);
    }
  }
}

Sample synthesize_splice(const RgbImage& base, const RgbImage& donor, std::uint64_t seed) {
  if (base.height() < 64 || base.width() < 64 || donor.height() < 64 || donor.width() < 64) {
    throw std::invalid_argument("synthesize_splice: images must be at least 64x64");
  }
  Rng rng(seed);
  const int h = base.height(), w = base.width();
  const int n = rng.uniform_int(4, 8);

  // Vertices on an ellipse at sorted angles form a convex polygon.
  std::vector<double> angles(n);
  for (int i = 0; i < n; ++i) angles[i] = (i + rng.uniform(0.15, 0.85)) * 2.0 * M_PI / n;
  const double aspect = rng.uniform(0.6, 1.6);
  std::vector<std::array<double, 2>> unit(n);
  for (int i = 0; i < n; ++i) unit[i] = {std::sin(angles[i]) * aspect, std::cos(angles[i])};
  double area = 0;
  for (int i = 0; i < n; ++i) {
    const auto& a = unit[i];
    const auto& b = unit[(i + 1) % n];
    area += a[1] * b[0] - b[1] * a[0];
  }
  area = std::abs(area) / 2.0;

  const double fraction = rng.uniform(0.03, 0.18);
  const double r = std::sqrt(fraction * h * w / area);
  double min_y = 1e9, max_y = -1e9, min_x = 1e9, max_x = -1e9;
  for (const auto& p : unit) {
    min_y = std::min(min_y, p[0] * r);
    max_y = std::max(max_y, p[0] * r);
    min_x = std::min(min_x, p[1] * r);
    max_x = std::max(max_x, p[1] * r);
  }
  const double cy = rng.uniform(-min_y + 1, std::max(-min_y + 1, h - 1 - max_y));
  const double cx = rng.uniform(-min_x + 1, std::max(-min_x + 1, w - 1 - max_x));
  std::vector<std::array<double, 2>> poly(n);
  for (int i = 0; i < n; ++i) poly[i] = {cy + unit[i][0] * r, cx + unit[i][1] * r};

  Sample out;
  out.image = base;
  out.label = 1;
  out.mask = Mask(h, w, 1, 0);
  out.id = "splice_" + std::to_string(seed);

  const int bb_top = std::max(0, int(std::floor(cy + min_y)));
  const int bb_left = std::max(0, int(std::floor(cx + min_x)));
  const int bb_h = std::min(h - 1, int(std::ceil(cy + max_y))) - bb_top + 1;
  const int bb_w = std::min(w - 1, int(std::ceil(cx + max_x))) - bb_left + 1;
  const int dy = rng.uniform_int(0, std::max(0, donor.height() - bb_h)) - bb_top;
  const int dx = rng.uniform_int(0, std::max(0, donor.width() - bb_w)) - bb_left;
  // Illumination mismatch between donor and base, as with content lifted from
  // another photograph.
  const double shift = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(30.0, 65.0);

  size_t count = 0;
  for (int y = bb_top; y < bb_top + bb_h; ++y) {
    for (int x = bb_left; x < bb_left + bb_w; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      bool inside = true;
      for (int i = 0; i < n && inside; ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % n];
        const double cross = (b[1] - a[1]) * (py - a[0]) - (b[0] - a[0]) * (px - a[1]);
        inside = cross >= 0;
      }
      if (!inside) continue;
      const int sy = std::clamp(y + dy, 0, donor.height() - 1);
      const int sx = std::clamp(x + dx, 0, donor.width() - 1);
      for (int c = 0; c < 3; ++c)
        out.image(y, x, c) = std::uint8_t(std::clamp(std::lround(donor(sy, sx, c) + shift), 0L, 255L));
      (*out.mask)(y, x) = 255;
      ++count;
    }
  }
  if (count == 0) {
    // Degenerate rasterization; fall back to the centre pixel.
    const int y = std::clamp(int(cy), 0, h - 1), x = std::clamp(int(cx), 0, w - 1);
    for (int c = 0; c < 3; ++c) out.image(y, x, c) = donor(y % donor.height(), x % donor.width(), c);
    (*out.mask)(y, x) = 255;
  }
  return out;
}

namespace {

constexpr double kMinShapeContrast = 90.0;

double luma(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

}  // namespace

RgbImage synthetic_scene(int height, int width, const SceneStyle& style, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> img(static_cast<size_t>(height) * width * 3);
  auto px = [&](int y, int x, int c) -> double& { return img[(static_cast<size_t>(y) * width + x) * 3 + c]; };

  std::array<double, 3> c0, c1;
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(40, 215);
    c1[c] = rng.uniform(40, 215);
  }
  const double theta = rng.uniform(0, 2 * M_PI);
  const double ux = std::cos(theta), uy = std::sin(theta);
  const double diag = std::hypot(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = std::clamp(0.5 + ((x - width / 2.0) * ux + (y - height / 2.0) * uy) / diag, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) px(y, x, c) = c0[c] * (1 - t) + c1[c] * t;
    }
  }

  const int shapes = rng.uniform_int(style.min_shapes, style.max_shapes);
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
    const double ry = rng.uniform(0.08, 0.3) * height, rx = rng.uniform(0.08, 0.3) * width;
    std::array<double, 3> col;
    // Pull a random colour to a luminance at least kMinShapeContrast away from
    // what is already drawn at the shape centre, on the side with headroom, so
    // the outline survives grayscale Canny.
    const int iy = std::min(height - 1, int(cy)), ix = std::min(width - 1, int(cx));
    const double lu = luma({px(iy, ix, 0), px(iy, ix, 1), px(iy, ix, 2)});
    const double room = lu < 127.5 ? 255.0 - lu : lu;
    const double target = lu + (lu < 127.5 ? 1.0 : -1.0) * rng.uniform(kMinShapeContrast, std::max(kMinShapeContrast, room));
    for (int c = 0; c < 3; ++c) col[c] = rng.uniform(10, 245);
    for (int it = 0; it < 4; ++it) {
      const double off = target - luma(col);
      for (int c = 0; c < 3; ++c) col[c] = std::clamp(col[c] + off, 0.0, 255.0);
    }
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        // Signed distance in pixels (negative inside), approximate for ellipses.
        double sd;
        if (ellipse) {
          const double ny = (y + 0.5 - cy) / ry, nx = (x + 0.5 - cx) / rx;
          sd = (std::sqrt(ny * ny + nx * nx) - 1.0) * std::min(ry, rx);
        } else {
          sd = std::max(std::abs(y + 0.5 - cy) - ry, std::abs(x + 0.5 - cx) - rx);
        }
        double cover;
        if (style.edge_blur <= 0) {
          cover = sd <= 0 ? 1.0 : 0.0;
        } else {
          cover = 1.0 / (1.0 + std::exp(sd / (0.6 * style.edge_blur)));
        }
        if (cover < 1e-4) continue;
        for (int c = 0; c < 3; ++c) px(y, x, c) = px(y, x, c) * (1 - cover) + col[c] * cover;
      }
    }
  }

  RgbImage out(height, width, 3);
  for (size_t i = 0; i < img.size(); ++i) {
    const double v = img[i] + (style.noise_sigma > 0 ? rng.normal(0.0, style.noise_sigma) : 0.0);
    out.data()[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

std::vector<Sample> synthetic_corpus(const SyntheticCorpusOptions& options) {
  Rng rng(options.seed);
  std::vector<Sample> out;
  out.reserve(options.splices + options.authentic);
  char buf[32];
  for (int i = 0; i < options.splices; ++i) {
    const auto base_seed = rng.next(), donor_seed = rng.next(), splice_seed = rng.next();
    const RgbImage base = synthetic_scene(options.size, options.size, options.base_style, base_seed);
    const RgbImage donor = synthetic_scene(options.size, options.size, options.donor_style, donor_seed);
    Sample s = synthesize_splice(base, donor, splice_seed);
    std::snprintf(buf, sizeof buf, "syn_s%04d", i);
    s.id = buf;
    out.push_back(std::move(s));
  }
  for (int i = 0; i < options.authentic; ++i) {
    Sample s;
    s.image = synthetic_scene(options.size, options.size, options.base_style, rng.next());
    s.label = 0;
    std::snprintf(buf, sizeof buf, "syn_a%04d", i);
    s.id = buf;
    out.push_back(std::move(s));
  }
  return out;
}

std::string to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::jpeg: return "jpeg";
    case PerturbationKind::gaussian_noise: return "gaussian_noise";
    case PerturbationKind::gaussian_blur: return "gaussian_blur";
  }
  return "?";
}

PerturbationKind parse_perturbation_kind(const std::string& name) {
  if (name == "jpeg") return PerturbationKind::jpeg;
  if (name == "gaussian_noise" || name == "noise") return PerturbationKind::gaussian_noise;
  if (name == "gaussian_blur" || name == "blur") return PerturbationKind::gaussian_blur;
  throw std::invalid_argument("unknown perturbation kind: " + name);
}

void validate(const PerturbationSpec& spec) {
  switch (spec.kind) {
    case PerturbationKind::jpeg:
      if (!(spec.level >= 30 && spec.level <= 100)) throw std::invalid_argument("jpeg quality must be in [30,100]");
      break;
    case PerturbationKind::gaussian_noise:
      if (!(spec.level >= 0 && spec.level <= 0.2)) throw std::invalid_argument("noise sigma must be in [0,0.2]");
      break;
    case PerturbationKind::gaussian_blur:
      if (!(spec.level >= 0 && spec.level <= 9 && spec.level == std::floor(spec.level))) {
        throw std::invalid_argument("blur radius must be an integer in [0,9]");
      }
      break;
  }
}

Sample perturb(const Sample& s, const PerturbationSpec& spec) {
  validate(spec);
  Sample out = s;
  switch (spec.kind) {
    case PerturbationKind::jpeg:
      if (spec.level < 100) out.image = decode_image(encode_jpeg(s.image, int(std::lround(spec.level))));
      break;
    case PerturbationKind::gaussian_noise:
      if (spec.level > 0) {
        Rng rng(spec.seed);
        const double sigma = spec.level * 255.0;
        for (auto& v : out.image.data()) {
          v = static_cast<std::uint8_t>(std::clamp(std::lround(v + rng.normal(0.0, sigma)), 0L, 255L));
        }
      }
      break;
    case PerturbationKind::gaussian_blur:
      out.image = gaussian_blur(s.image, int(spec.level));
      break;
  }
  return out;
}

std::vector<PerturbationSpec> default_sweep(PerturbationKind kind, std::uint64_t seed) {
  std::vector<double> levels;
  switch (kind) {
    case PerturbationKind::jpeg: levels = {100, 90, 80, 70, 60, 50}; break;
    case PerturbationKind::gaussian_noise: levels = {0.0, 0.02, 0.04, 0.06, 0.08, 0.10}; break;
    case PerturbationKind::gaussian_blur: levels = {0, 1, 2, 3, 4, 5}; break;
  }
  std::vector<PerturbationSpec> out;
  for (double l : levels) out.push_back({kind, l, seed});
  return out;
}

size_t jpeg_encoded_size(const RgbImage& image, int quality) { return encode_jpeg(image, quality).size(); }

}  // namespace sapl::corpus
