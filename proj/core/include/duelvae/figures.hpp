#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duelvae/evaluation.hpp"
#include "duelvae/training.hpp"

namespace duelvae {

struct Rgb {
  uint8_t r, g, b;
};

/// Fixed per-label colors for digit classes 0..9.
const std::array<Rgb, 10>& label_colors();

/// 1-sd ellipse of a 2-D Gaussian: semi-axes are √eigenvalues along the
/// covariance eigenvectors. `angle` is the major axis direction in radians.
struct EllipseGeometry {
  double cx = 0.0, cy = 0.0;
  double major = 0.0, minor = 0.0;
  double angle = 0.0;
  /// Endpoint of the major and minor semi-axes.
  [[nodiscard]] std::array<double, 2> major_end() const;
  [[nodiscard]] std::array<double, 2> minor_end() const;
};

/// Covariance [[a, b], [b, c]].
EllipseGeometry ellipse_geometry(double mx, double my, double a, double b, double c);

/// Backend-neutral figure description; coordinates are in data units.
struct Figure {
  struct Marker {
    double x, y;
    char shape;  // 'o' circle, 's' square, '^' triangle, 'd' diamond
    Rgb color;
    std::string series;
  };
  struct Line {
    std::vector<std::array<double, 2>> points;
    bool dashed = false;
    Rgb color{0, 0, 0};
    std::string series;
  };
  struct Ellipse {
    EllipseGeometry geometry;
    Rgb color;
  };

  std::string title;
  std::string x_label, y_label;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  std::vector<Marker> markers;
  std::vector<Line> lines;
  std::vector<Ellipse> ellipses;
  std::vector<std::string> notes;     // printed under the title
  std::vector<std::string> digests;   // provenance, embedded as metadata

  /// Fits the axis limits around all content with a margin.
  void autoscale(double margin = 0.05);
  [[nodiscard]] std::string to_svg(int width = 640, int height = 480) const;
  void write_svg(const std::filesystem::path& path) const;
};

struct RatePoint {
  std::string digest;
  std::string decoder;  // series label, one marker shape per decoder class
  double rate = 0.0;
  double distortion = 0.0;
  double accuracy = 0.0;
};

/// Scatter of rate vs accuracy with a dashed vertical line at `rate_cap`.
Figure rate_accuracy_figure(const std::vector<RatePoint>& points, double rate_cap = 10.0);

/// Rate-distortion scatter with a constant-ELBO diagonal through the best
/// (lowest D+R) run; color encodes accuracy.
Figure rate_distortion_figure(const std::vector<RatePoint>& points);

struct DropCurve {
  std::string label;
  std::string digest;
  MetricsTimeline timeline;
};

/// Two figures: distortion (solid) and ELBO (dashed), and rate; each curve
/// has a triangle marker at its drop step.
std::array<Figure, 2> drop_reg_figures(const std::vector<DropCurve>& curves);

/// One ellipse per example from 2-D encodings, colored by label.
Figure latent_ellipse_figure(const EncodedSet& encoded, const std::string& digest);

}  // namespace duelvae
