#include "duelvae/figures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

#include "duelvae/run_store.hpp"

namespace duelvae {

const std::array<Rgb, 10>& label_colors() {
  static const std::array<Rgb, 10> colors{{{66, 134, 244},
                                           {255, 128, 0},
                                           {0, 255, 0},
                                           {255, 0, 0},
                                           {235, 122, 255},
                                           {140, 88, 58},
                                           {255, 127, 193},
                                           {175, 175, 175},
                                           {222, 247, 133},
                                           {0, 255, 225}}};
  return colors;
}

std::array<double, 2> EllipseGeometry::major_end() const {
  return {cx + major * std::cos(angle), cy + major * std::sin(angle)};
}

std::array<double, 2> EllipseGeometry::minor_end() const {
  return {cx - minor * std::sin(angle), cy + minor * std::cos(angle)};
}

EllipseGeometry ellipse_geometry(double mx, double my, double a, double b, double c) {
  const double half_trace = 0.5 * (a + c);
  const double disc = std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
  const double l1 = half_trace + disc;
  const double l2 = std::max(0.0, half_trace - disc);
  EllipseGeometry g;
  g.cx = mx;
  g.cy = my;
  g.major = std::sqrt(l1);
  g.minor = std::sqrt(l2);
  if (b == 0.0) {
    g.angle = a >= c ? 0.0 : std::numbers::pi / 2;
  } else {
    g.angle = std::atan2(l1 - a, b);
  }
  return g;
}

void Figure::autoscale(double margin) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto take = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  };
  for (const auto& m : markers) take(m.x, m.y);
  for (const auto& l : lines)
    for (const auto& p : l.points) take(p[0], p[1]);
  for (const auto& e : ellipses) {
    const double r = e.geometry.major;
    take(e.geometry.cx - r, e.geometry.cy - r);
    take(e.geometry.cx + r, e.geometry.cy + r);
  }
  if (!std::isfinite(x0)) return;
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  const double mx = margin * (x1 - x0), my = margin * (y1 - y0);
  x_min = x0 - mx;
  x_max = x1 + mx;
  y_min = y0 - my;
  y_max = y1 + my;
}

namespace {

std::string color(const Rgb& c) {
  std::ostringstream s;
  s << "rgb(" << int(c.r) << "," << int(c.g) << "," << int(c.b) << ")";
  return s.str();
}

std::string escape(const std::string& in) {
  std::string out;
  for (char ch : in) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-12; t += step) out.push_back(t);
  return out;
}

const Rgb kSeriesColors[] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189},
                             {255, 127, 14}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
const char kShapes[] = {'o', 's', '^', 'd'};

Rgb viridis_like(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {static_cast<uint8_t>(68 + t * (253 - 68)), static_cast<uint8_t>(1 + t * (231 - 1)),
          static_cast<uint8_t>(84 + t * (37 - 84))};
}

}  // namespace

std::string Figure::to_svg(int width, int height) const {
  const double left = 70, right = 20, top = 40 + 14.0 * static_cast<double>(notes.size()), bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto X = [&](double x) { return left + (x - x_min) / (x_max - x_min) * pw; };
  auto Y = [&](double y) { return top + (1.0 - (y - y_min) / (y_max - y_min)) * ph; };
  const double sx = pw / (x_max - x_min), sy = ph / (y_max - y_min);

  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<metadata>";
  for (size_t i = 0; i < digests.size(); ++i) s << (i ? " " : "") << escape(digests[i]);
  s << "</metadata>\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n";
  for (size_t i = 0; i < notes.size(); ++i)
    s << "<text x=\"" << width / 2 << "\" y=\"" << 34 + 14 * i << "\" text-anchor=\"middle\">"
      << escape(notes[i]) << "</text>\n";
  s << "<defs><clipPath id=\"plot\"><rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw
    << "\" height=\"" << ph << "\"/></clipPath></defs>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(x_min, x_max))
    s << "<line x1=\"" << X(t) << "\" y1=\"" << top + ph << "\" x2=\"" << X(t) << "\" y2=\"" << top + ph + 4
      << "\" stroke=\"black\"/><text x=\"" << X(t) << "\" y=\"" << top + ph + 16
      << "\" text-anchor=\"middle\">" << t << "</text>\n";
  for (double t : ticks(y_min, y_max))
    s << "<line x1=\"" << left - 4 << "\" y1=\"" << Y(t) << "\" x2=\"" << left << "\" y2=\"" << Y(t)
      << "\" stroke=\"black\"/><text x=\"" << left - 6 << "\" y=\"" << Y(t) + 4
      << "\" text-anchor=\"end\">" << t << "</text>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
    << escape(x_label) << "</text>\n";
  s << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";

  s << "<g clip-path=\"url(#plot)\">\n";
  for (const auto& e : ellipses) {
    const auto& g = e.geometry;
    // Data→pixel flips y, so the rotation sense flips too; anisotropic axis
    // scales are folded into a matrix transform.
    s << "<ellipse cx=\"0\" cy=\"0\" rx=\"" << g.major << "\" ry=\"" << g.minor << "\" transform=\"matrix("
      << sx << " 0 0 " << -sy << " " << X(g.cx) << " " << Y(g.cy) << ") rotate(" << g.angle * 180.0 / std::numbers::pi
      << ")\" fill=\"none\" stroke=\"" << color(e.color) << "\" stroke-width=\"0.8\" vector-effect=\"non-scaling-stroke\"/>\n";
  }
  for (const auto& l : lines) {
    s << "<polyline fill=\"none\" stroke=\"" << color(l.color) << "\" stroke-width=\"1.5\""
      << (l.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
    for (const auto& p : l.points) s << X(p[0]) << "," << Y(p[1]) << " ";
    s << "\"/>\n";
  }
  for (const auto& m : markers) {
    const double x = X(m.x), y = Y(m.y);
    const auto fill = color(m.color);
    switch (m.shape) {
      case 's':
        s << "<rect x=\"" << x - 4 << "\" y=\"" << y - 4 << "\" width=\"8\" height=\"8\" fill=\"" << fill << "\"/>\n";
        break;
      case '^':
        s << "<polygon points=\"" << x << "," << y - 5 << " " << x - 5 << "," << y + 4 << " " << x + 5 << ","
          << y + 4 << "\" fill=\"" << fill << "\"/>\n";
        break;
      case 'd':
        s << "<polygon points=\"" << x << "," << y - 5 << " " << x + 5 << "," << y << " " << x << "," << y + 5
          << " " << x - 5 << "," << y << "\" fill=\"" << fill << "\"/>\n";
        break;
      default:
        s << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\"" << fill << "\"/>\n";
    }
  }
  s << "</g>\n";

  // Legend of distinct series.
  std::vector<std::pair<std::string, std::string>> legend;
  auto add = [&](const std::string& name, const std::string& swatch) {
    if (name.empty()) return;
    for (const auto& [n, _] : legend)
      if (n == name) return;
    legend.emplace_back(name, swatch);
  };
  for (const auto& m : markers) add(m.series, color(m.color));
  for (const auto& l : lines) add(l.series, color(l.color));
  for (size_t i = 0; i < legend.size(); ++i) {
    const double y = top + 12 + 14.0 * static_cast<double>(i);
    s << "<rect x=\"" << left + pw - 120 << "\" y=\"" << y - 8 << "\" width=\"8\" height=\"8\" fill=\""
      << legend[i].second << "\"/><text x=\"" << left + pw - 108 << "\" y=\"" << y << "\">"
      << escape(legend[i].first) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void Figure::write_svg(const std::filesystem::path& path) const { write_file_atomic(path, to_svg()); }

namespace {

std::map<std::string, size_t> series_index(const std::vector<RatePoint>& points) {
  std::map<std::string, size_t> idx;
  for (const auto& p : points) idx.emplace(p.decoder, 0);
  size_t i = 0;
  for (auto& [_, v] : idx) v = i++;
  return idx;
}

}  // namespace

Figure rate_accuracy_figure(const std::vector<RatePoint>& points, double rate_cap) {
  if (points.empty()) throw std::invalid_argument("rate-accuracy figure: no runs selected");
  Figure f;
  f.title = "Rate vs semantic accuracy";
  f.x_label = "rate (nats)";
  f.y_label = "accuracy";
  const auto idx = series_index(points);
  for (const auto& p : points) {
    const size_t i = idx.at(p.decoder);
    f.markers.push_back({p.rate, p.accuracy, kShapes[i % 4], kSeriesColors[i % 8], p.decoder});
    f.digests.push_back(p.digest);
  }
  f.autoscale();
  f.x_min = std::min(f.x_min, 0.0);
  f.x_max = std::max(f.x_max, rate_cap * 1.1);
  f.lines.push_back({{{rate_cap, f.y_min}, {rate_cap, f.y_max}}, true, {0, 0, 0}, ""});
  return f;
}

Figure rate_distortion_figure(const std::vector<RatePoint>& points) {
  if (points.empty()) throw std::invalid_argument("rate-distortion figure: no runs selected");
  Figure f;
  f.title = "Rate-distortion plane";
  f.x_label = "rate (nats)";
  f.y_label = "distortion (nats)";
  f.notes.push_back("color: reconstruction accuracy; diagonal: constant ELBO through the best run");
  const auto idx = series_index(points);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    f.markers.push_back({p.rate, p.distortion, kShapes[idx.at(p.decoder) % 4], viridis_like(p.accuracy), p.decoder});
    f.digests.push_back(p.digest);
    best = std::min(best, p.rate + p.distortion);
  }
  f.autoscale();
  // D + R = best across the visible range.
  f.lines.push_back({{{f.x_min, best - f.x_min}, {f.x_max, best - f.x_max}}, true, {90, 90, 90}, ""});
  return f;
}

std::array<Figure, 2> drop_reg_figures(const std::vector<DropCurve>& curves) {
  if (curves.empty()) throw std::invalid_argument("drop-regularization figure: no timelines");
  std::array<Figure, 2> figs;
  figs[0].title = "Distortion (solid) and ELBO (dashed)";
  figs[0].y_label = "nats";
  figs[1].title = "Rate";
  figs[1].y_label = "rate (nats)";
  for (auto& f : figs) f.x_label = "step";
  for (size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const Rgb col = kSeriesColors[i % 8];
    Figure::Line d{{}, false, col, c.label}, e{{}, true, col, ""}, r{{}, false, col, c.label};
    for (const auto& row : c.timeline.rows) {
      const double s = static_cast<double>(row.step);
      d.points.push_back({s, row.distortion});
      e.points.push_back({s, row.elbo_nats});
      r.points.push_back({s, row.rate});
    }
    if (c.timeline.drop_step) {
      // Marker at the logged row nearest the drop step.
      const auto& rows = c.timeline.rows;
      auto it = std::min_element(rows.begin(), rows.end(), [&](const MetricsRow& a, const MetricsRow& b) {
        return std::llabs(a.step - *c.timeline.drop_step) < std::llabs(b.step - *c.timeline.drop_step);
      });
      if (it != rows.end()) {
        figs[0].markers.push_back({static_cast<double>(*c.timeline.drop_step), it->distortion, '^', col, c.label});
        figs[1].markers.push_back({static_cast<double>(*c.timeline.drop_step), it->rate, '^', col, c.label});
      }
    }
    figs[0].lines.push_back(std::move(d));
    figs[0].lines.push_back(std::move(e));
    figs[1].lines.push_back(std::move(r));
    for (auto& f : figs) f.digests.push_back(c.digest);
  }
  for (auto& f : figs) f.autoscale();
  return figs;
}

Figure latent_ellipse_figure(const EncodedSet& encoded, const std::string& digest) {
  if (encoded.dim() != 2)
    throw std::invalid_argument("latent ellipse plot needs a 2-dimensional latent space (got " +
                                std::to_string(encoded.dim()) + "); train with latent_dim 2");
  Figure f;
  f.title = "Encoder distributions";
  f.notes.push_back("one 1-sd ellipse per test example, colored by label");
  f.x_label = "z1";
  f.y_label = "z2";
  f.digests.push_back(digest);
  auto mean = encoded.mean.to(torch::kDouble).contiguous();
  auto cov = torch::matmul(encoded.scale_tril, encoded.scale_tril.transpose(-1, -2)).to(torch::kDouble).contiguous();
  auto labels = encoded.labels.contiguous();
  const auto* m = mean.data_ptr<double>();
  const auto* c = cov.data_ptr<double>();
  const auto* y = labels.data_ptr<int64_t>();
  for (int64_t i = 0; i < encoded.size(); ++i) {
    const auto g = ellipse_geometry(m[2 * i], m[2 * i + 1], c[4 * i], c[4 * i + 1], c[4 * i + 3]);
    f.ellipses.push_back({g, label_colors()[static_cast<size_t>(y[i]) % 10]});
  }
  f.autoscale(0.02);
  return f;
}

}  // namespace duelvae
