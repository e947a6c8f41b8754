#pragma once

#include <algorithm>
#include <fstream>

#include "sapl/evalkit.hpp"

namespace svg {

inline void region_bars(const std::filesystem::path& path, const sapl::evalkit::RegionStats& s) {
  using namespace sapl::evalkit;
  std::ofstream f(path);
  const int w = 640, h = 360, pad = 40;
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  const char* colors[] = {"#c0392b", "#e67e22", "#2980b9", "#7f8c8d"};
  const Statistic shown[] = {Statistic::local_variance, Statistic::gradient};
  for (int p = 0; p < 2; ++p) {
    double top = 1e-12;
    for (Region r : kRegions) top = std::max(top, s.at(r, shown[p]).mean);
    const int x0 = pad + p * (w / 2);
    f << "<text x='" << x0 << "' y='20' font-size='12'>" << to_string(shown[p]) << "</text>\n";
    for (int i = 0; i < 4; ++i) {
      const double v = s.at(kRegions[i], shown[p]).mean;
      const int bh = int((h - 2 * pad) * v / top);
      f << "<rect x='" << x0 + i * 60 << "' y='" << h - pad - bh << "' width='40' height='" << bh << "' fill='"
        << colors[i] << "'><title>" << to_string(kRegions[i]) << ' ' << v << "</title></rect>\n";
    }
  }
  f << "</svg>\n";
}

inline void sweep_lines(const std::filesystem::path& path, const std::vector<sapl::evalkit::SweepRow>& rows,
                        sapl::corpus::PerturbationKind kind) {
  std::vector<const sapl::evalkit::SweepRow*> sel;
  for (const auto& r : rows)
    if (r.kind == kind) sel.push_back(&r);
  std::ofstream f(path);
  const int w = 480, h = 320, pad = 40;
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  f << "<text x='" << pad << "' y='20' font-size='12'>" << sapl::corpus::to_string(kind) << "</text>\n";
  if (sel.size() > 1) {
    const double lo = sel.front()->level, hi = sel.back()->level;
    auto line = [&](auto get, const char* color) {
      f << "<polyline fill='none' stroke='" << color << "' points='";
      for (const auto* r : sel) {
        const auto v = get(*r);
        if (!v) continue;
        const double x = pad + (w - 2 * pad) * (hi > lo ? (r->level - lo) / (hi - lo) : 0.0);
        const double y = h - pad - (h - 2 * pad) * *v;
        f << x << ',' << y << ' ';
      }
      f << "'/>\n";
    };
    line([](const auto& r) { return r.p_f1; }, "#c0392b");
    line([](const auto& r) { return r.i_auc; }, "#2980b9");
  }
  f << "</svg>\n";
}

}  // namespace svg
