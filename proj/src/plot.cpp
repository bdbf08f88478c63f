#include "teleop/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "teleop/error.hpp"

namespace teleop {

namespace {

constexpr double kPanel = 360.0;
constexpr double kMargin = 40.0;

struct Range {
  double lo = 1e300;
  double hi = -1e300;
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span() const { return hi - lo; }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string render_trajectory_svg(const std::vector<AlignedPair>& aligned) {
  if (aligned.empty()) throw Error(ErrorCode::kEmptySeries, "nothing to plot");

  Range r[3];
  for (const auto& a : aligned) {
    for (int i = 0; i < 3; ++i) {
      r[i].add(a.hand_mm[i]);
      r[i].add(a.tip_mm[i]);
    }
  }
  double span = std::max({r[0].span(), r[1].span(), r[2].span(), 1.0}) * 1.08;
  double mid[3];
  for (int i = 0; i < 3; ++i) mid[i] = 0.5 * (r[i].lo + r[i].hi);

  const double width = 2 * kPanel + 3 * kMargin;
  const double height = kPanel + 2 * kMargin;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  auto panel = [&](int p, int a, int b, const char* title) {
    const double x0 = kMargin + p * (kPanel + kMargin);
    const double y0 = kMargin;
    auto px = [&](double v) { return x0 + (v - (mid[a] - span / 2)) / span * kPanel; };
    auto py = [&](double v) { return y0 + kPanel - (v - (mid[b] - span / 2)) / span * kPanel; };
    const char* names = "xyz";
    svg << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanel
        << "\" height=\"" << kPanel << "\" fill=\"none\" stroke=\"#888\"/>\n"
        << "<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\">" << title << "</text>\n"
        << "<text x=\"" << x0 << "\" y=\"" << y0 + kPanel + 14 << "\">" << names[a] << " "
        << fmt(mid[a] - span / 2) << " .. " << fmt(mid[a] + span / 2) << " mm</text>\n"
        << "<text transform=\"translate(" << x0 - 6 << "," << y0 + kPanel
        << ") rotate(-90)\">" << names[b] << " " << fmt(mid[b] - span / 2) << " .. "
        << fmt(mid[b] + span / 2) << " mm</text>\n";
    auto line = [&](bool hand, const char* colour) {
      svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
      for (const auto& s : aligned) {
        const Vec3& v = hand ? s.hand_mm : s.tip_mm;
        svg << fmt(px(v[a])) << ',' << fmt(py(v[b])) << ' ';
      }
      svg << "\"/>\n";
    };
    line(true, "red");
    line(false, "blue");
    svg << "</g>\n";
  };
  panel(0, 0, 1, "top view (XY)");
  panel(1, 0, 2, "side view (XZ)");

  const double lx = width - kMargin - 120;
  svg << "<text x=\"" << lx << "\" y=\"" << 14 << "\" fill=\"red\">hand</text>\n"
      << "<text x=\"" << lx + 50 << "\" y=\"" << 14 << "\" fill=\"blue\">camera tip</text>\n"
      << "</svg>\n";
  return svg.str();
}

}  // namespace teleop
