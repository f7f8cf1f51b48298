#pragma once

// Minimal deterministic SVG charts: learning curves with shaded standard
// error bands, and grouped bars with error whiskers.

#include <string>
#include <vector>

#include "metacpr/config.hpp"

namespace metacpr {

struct Band {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> err;
};

struct Bar {
  std::string group;  // x-axis category, e.g. "n=6"
  std::string label;  // series, e.g. variant name
  double value = 0.0;
  double err = 0.0;
};

struct PlotText {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  /// Embedded as a comment in the SVG.
  std::string config_hash;
};

std::string line_plot_svg(const std::vector<Band>& bands, const PlotText& text);
std::string bar_plot_svg(const std::vector<Bar>& bars, const PlotText& text);

/// Learning curves from metrics logs: records are grouped by their variant,
/// the per-update value is the mean return over training tasks, and seeds
/// are aggregated per update index into mean +/- standard error.
std::vector<Band> learning_curves(const std::vector<std::vector<Json>>& logs);

}  // namespace metacpr
