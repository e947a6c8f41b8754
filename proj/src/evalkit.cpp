#include "sapl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "sapl/softedge.hpp"

namespace sapl::evalkit {

namespace {

void check_scores(const std::vector<double>& scores, const std::vector<int>& labels, int& npos, int& nneg) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  npos = nneg = 0;
  for (int l : labels) {
    if (l == 1) ++npos;
    else if (l == 0) ++nneg;
    else throw MetricError("labels must be 0 or 1");
  }
  if (npos == 0 || nneg == 0) throw MetricError("AUC needs both classes");
}

}  // namespace

double image_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  int npos, nneg;
  check_scores(scores, labels, npos, nneg);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * double(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) rank_sum += mid;
    i = j;
  }
  const double u = rank_sum - 0.5 * double(npos) * double(npos + 1);
  return u / (double(npos) * double(nneg));
}

double roc_auc_trapezoid(const std::vector<double>& scores, const std::vector<int>& labels) {
  int npos, nneg;
  check_scores(scores, labels, npos, nneg);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0, fp = 0, area = 0;
  for (std::size_t i = 0; i < idx.size();) {
    double dtp = 0, dfp = 0;
    std::size_t j = i;
    for (; j < idx.size() && scores[idx[j]] == scores[idx[i]]; ++j) (labels[idx[j]] == 1 ? dtp : dfp) += 1;
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area / (double(npos) * double(nneg));
}

double pixel_f1(const RealGrid& heatmap, const Mask& mask, double threshold) {
  if (!heatmap.same_extent(mask)) throw MetricError("heatmap and mask differ in size");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
    const bool p = heatmap.data()[i] >= threshold;
    const bool t = mask.data()[i] != 0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fn == 0) throw MetricError("mask has no positive pixels");
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

namespace {

bool has_positive(const Mask& m) {
  return std::any_of(m.data().begin(), m.data().end(), [](std::uint8_t v) { return v != 0; });
}

}  // namespace

MetricsReport evaluate(pipeline::Model& model, const std::vector<pipeline::PreparedSample>& data,
                       const EvalOptions& opts) {
  MetricsReport r;
  r.threshold = opts.threshold;
  if (!opts.heatmap_dir.empty()) std::filesystem::create_directories(opts.heatmap_dir);
  std::vector<double> scores;
  std::vector<int> labels;
  double f1_sum = 0;
  for (const auto& s : data) {
    pipeline::LocalizationResult loc = pipeline::localize(model, s);
    PerImage row{s.id, s.label, loc.score, std::nullopt};
    if (s.label == 1 && s.mask) {
      if (has_positive(*s.mask)) {
        row.f1 = pixel_f1(loc.heatmap, *s.mask, opts.threshold);
        f1_sum += *row.f1;
        ++r.f1_count;
      } else {
        ++r.empty_masks;
      }
    }
    if (!opts.heatmap_dir.empty()) {
      pipeline::write_heatmap(opts.heatmap_dir / (s.id + ".saplmap"), loc.heatmap);
      pipeline::write_heatmap_preview(opts.heatmap_dir / (s.id + ".png"), loc.heatmap);
    }
    scores.push_back(loc.score);
    labels.push_back(s.label);
    r.per_image.push_back(std::move(row));
  }
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
  if (both) r.i_auc = image_auc(scores, labels);
  if (r.f1_count > 0) r.p_f1 = f1_sum / r.f1_count;
  return r;
}

MetricsReport evaluate(pipeline::Model& model, const std::vector<corpus::Sample>& data, const EvalOptions& opts) {
  std::vector<pipeline::PreparedSample> prepared;
  prepared.reserve(data.size());
  for (const auto& s : data) prepared.push_back(pipeline::prepare(s, model.backbone(), model.config().edge));
  return evaluate(model, prepared, opts);
}

std::optional<double> all_positive_f1(const std::vector<corpus::Sample>& data) {
  double sum = 0;
  int n = 0;
  for (const auto& s : data) {
    if (s.label != 1 || !s.mask || !has_positive(*s.mask)) continue;
    sum += pixel_f1(RealGrid(s.mask->height(), s.mask->width(), 1, 1.0), *s.mask, 0.5);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

namespace {

void put(std::ostream& os, const std::optional<double>& v) {
  if (v) os << *v;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const MetricsReport& r) {
  os << std::setprecision(10);
  os << "id,label,score,f1\n";
  for (const auto& p : r.per_image) {
    os << p.id << ',' << p.label << ',' << p.score << ',';
    put(os, p.f1);
    os << '\n';
  }
  os << "summary,threshold=" << r.threshold << ",";
  if (r.i_auc) os << "i_auc=" << *r.i_auc;
  os << ',';
  if (r.p_f1) os << "p_f1=" << *r.p_f1;
  os << '\n';
}

std::string to_string(Region r) {
  switch (r) {
    case Region::manipulated_edge: return "manipulated_edge";
    case Region::manipulated_inner: return "manipulated_inner";
    case Region::authentic_edge: return "authentic_edge";
    case Region::authentic_inner: return "authentic_inner";
  }
  return "?";
}

std::string to_string(Statistic s) {
  switch (s) {
    case Statistic::local_variance: return "local_variance";
    case Statistic::gradient: return "gradient";
    case Statistic::skewness: return "skewness";
    case Statistic::kurtosis: return "kurtosis";
  }
  return "?";
}

Image<std::uint8_t> region_labels(const RgbImage& image, const Mask& mask, const RegionOptions& opts) {
  if (!image.same_extent(mask)) throw std::invalid_argument("image and mask differ in size");
  if (opts.band_radius < 0) throw std::invalid_argument("band radius must be >= 0");
  Mask inside(mask.height(), mask.width()), outside(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
    inside.data()[i] = mask.data()[i] ? 255 : 0;
    outside.data()[i] = mask.data()[i] ? 0 : 255;
  }
  const RealGrid to_inside = softedge::distance_to_edges(inside);
  const RealGrid to_outside = softedge::distance_to_edges(outside);
  const Mask edges = softedge::canny_edges(image, opts.canny);
  const double r = opts.band_radius;
  Image<std::uint8_t> out(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
    const bool dilated = to_inside.data()[i] <= r;
    const bool eroded = mask.data()[i] && to_outside.data()[i] > r;
    Region g;
    if (eroded) g = Region::manipulated_inner;
    else if (dilated) g = Region::manipulated_edge;
    else if (edges.data()[i]) g = Region::authentic_edge;
    else g = Region::authentic_inner;
    out.data()[i] = std::uint8_t(1 + int(g));
  }
  return out;
}

Moments sample_moments(const std::vector<double>& values) {
  Moments m;
  if (values.empty()) return m;
  const double n = double(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 1e-12 * std::max(1.0, mean * mean))) return m;
  m.skewness = m3 / std::pow(m2, 1.5);
  m.kurtosis = m4 / (m2 * m2) - 3.0;
  return m;
}

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

}  // namespace

RealGrid local_variance(const RealGrid& gray, int window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("variance window must be odd and positive");
  const int h = gray.height(), w = gray.width(), r = window / 2;
  RealGrid out(h, w);
  const double n = double(window) * window;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Shifted by the centre value so flat windows give exactly zero.
      const double ref = gray(y, x);
      double s = 0, s2 = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = reflect101(y + dy, h);
        for (int dx = -r; dx <= r; ++dx) {
          const double v = gray(yy, reflect101(x + dx, w)) - ref;
          s += v;
          s2 += v * v;
        }
      }
      const double mean = s / n;
      out(y, x) = std::max(0.0, s2 / n - mean * mean);
    }
  }
  return out;
}

RealGrid sobel_magnitude(const RealGrid& gray) {
  const int h = gray.height(), w = gray.width();
  RealGrid out(h, w);
  for (int y = 0; y < h; ++y) {
    const int ym = reflect101(y - 1, h), yp = reflect101(y + 1, h);
    for (int x = 0; x < w; ++x) {
      const int xm = reflect101(x - 1, w), xp = reflect101(x + 1, w);
      const double gx = (gray(ym, xp) + 2 * gray(y, xp) + gray(yp, xp)) - (gray(ym, xm) + 2 * gray(y, xm) + gray(yp, xm));
      const double gy = (gray(yp, xm) + 2 * gray(yp, x) + gray(yp, xp)) - (gray(ym, xm) + 2 * gray(ym, x) + gray(ym, xp));
      out(y, x) = std::hypot(gx, gy);
    }
  }
  return out;
}

RegionStats region_stats(const std::vector<corpus::Sample>& samples, const RegionOptions& opts) {
  std::array<std::array<std::vector<double>, 4>, 4> per_image;
  RegionStats out;
  for (const auto& s : samples) {
    if (!s.mask) throw std::invalid_argument("region statistics need masks; sample '" + s.id + "' has none");
    const Image<std::uint8_t> labels = region_labels(s.image, *s.mask, opts);
    const RealGrid gray = to_gray(s.image);
    const RealGrid var = local_variance(gray, opts.variance_window);
    const RealGrid grad = sobel_magnitude(gray);
    std::array<std::vector<double>, 4> intensity;
    std::array<double, 4> var_sum{}, grad_sum{};
    for (std::size_t i = 0; i < labels.pixel_count(); ++i) {
      const int g = labels.data()[i] - 1;
      intensity[g].push_back(gray.data()[i]);
      var_sum[g] += var.data()[i];
      grad_sum[g] += grad.data()[i];
    }
    for (std::size_t g = 0; g < 4; ++g) {
      const double n = double(intensity[g].size());
      if (n == 0) {
        ++out.skipped[g];
        continue;
      }
      per_image[g][std::size_t(Statistic::local_variance)].push_back(var_sum[g] / n);
      per_image[g][std::size_t(Statistic::gradient)].push_back(grad_sum[g] / n);
      const Moments m = sample_moments(intensity[g]);
      if (m.skewness) per_image[g][std::size_t(Statistic::skewness)].push_back(*m.skewness);
      else ++out.table[g][std::size_t(Statistic::skewness)].undefined;
      if (m.kurtosis) per_image[g][std::size_t(Statistic::kurtosis)].push_back(*m.kurtosis);
      else ++out.table[g][std::size_t(Statistic::kurtosis)].undefined;
    }
  }
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& v = per_image[g][k];
      Summary& sm = out.table[g][k];
      sm.count = int(v.size());
      if (v.empty()) continue;
      sm.mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
      double ss = 0;
      for (double x : v) ss += (x - sm.mean) * (x - sm.mean);
      sm.stddev = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    }
  }
  return out;
}

void write_region_stats_csv(std::ostream& os, const RegionStats& s) {
  os << std::setprecision(10);
  os << "region,statistic,mean,std,images,undefined,skipped\n";
  for (Region r : kRegions) {
    for (Statistic k : kStatistics) {
      const Summary& sm = s.at(r, k);
      os << to_string(r) << ',' << to_string(k) << ',';
      if (sm.count) os << sm.mean << ',' << sm.stddev;
      else os << ',';
      os << ',' << sm.count << ',' << sm.undefined << ',' << s.skipped[std::size_t(r)] << '\n';
    }
  }
}

std::vector<SweepRow> robustness_sweep(pipeline::Model& model, const std::vector<corpus::Sample>& data,
                                       std::vector<corpus::PerturbationSpec> specs, double threshold) {
  for (const auto& sp : specs) corpus::validate(sp);
  std::stable_sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.level < b.level;
  });
  std::vector<SweepRow> rows;
  for (const auto& sp : specs) {
    std::vector<corpus::Sample> perturbed;
    perturbed.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      corpus::PerturbationSpec per = sp;
      per.seed = sp.seed + i;
      perturbed.push_back(corpus::perturb(data[i], per));
    }
    const MetricsReport r = evaluate(model, perturbed, EvalOptions{threshold, {}});
    rows.push_back({sp.kind, sp.level, r.p_f1, r.i_auc});
  }
  return rows;
}

void write_robustness_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << std::setprecision(10);
  os << "kind,level,p_f1,i_auc\n";
  for (const auto& r : rows) {
    os << corpus::to_string(r.kind) << ',' << r.level << ',';
    put(os, r.p_f1);
    os << ',';
    put(os, r.i_auc);
    os << '\n';
  }
}

}  // namespace sapl::evalkit
