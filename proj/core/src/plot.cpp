#include "metacpr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "metacpr/errors.hpp"
#include "metacpr/stats.hpp"

namespace metacpr {

namespace {

constexpr double kWidth = 720.0, kHeight = 440.0;
constexpr double kLeft = 70.0, kRight = 170.0, kTop = 40.0, kBottom = 60.0;

const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};
  return palette[i % (sizeof palette / sizeof *palette)];
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void widen(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
}

void header(std::ostringstream& os, const PlotText& t) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  if (!t.config_hash.empty()) os << "<!-- config_hash=" << escape(t.config_hash) << " -->\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(t.title)
     << "</text>\n";
  os << "<text x=\"" << fmt(kLeft + (kWidth - kLeft - kRight) / 2) << "\" y=\"" << fmt(kHeight - 15)
     << "\" text-anchor=\"middle\">" << escape(t.xlabel) << "</text>\n";
  os << "<text transform=\"translate(18," << fmt(kTop + (kHeight - kTop - kBottom) / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(t.ylabel) << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, bool x_ticks) {
  os << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(kHeight - kBottom) << "\" x2=\"" << fmt(kWidth - kRight)
     << "\" y2=\"" << fmt(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(kTop) << "\" x2=\"" << fmt(kLeft) << "\" y2=\""
     << fmt(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << fmt(kLeft - 6) << "\" y=\"" << fmt(f.py(y) + 4) << "\" text-anchor=\"end\">" << tick(y)
       << "</text>\n";
    if (x_ticks) {
      const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
      os << "<text x=\"" << fmt(f.px(x)) << "\" y=\"" << fmt(kHeight - kBottom + 16) << "\" text-anchor=\"middle\">"
         << tick(x) << "</text>\n";
    }
  }
}

void legend(std::ostringstream& os, const std::vector<std::string>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(i);
    os << "<rect x=\"" << fmt(kWidth - kRight + 12) << "\" y=\"" << fmt(y - 9) << "\" width=\"12\" height=\"12\" fill=\""
       << color(i) << "\"/>\n";
    os << "<text x=\"" << fmt(kWidth - kRight + 30) << "\" y=\"" << fmt(y + 2) << "\">" << escape(labels[i])
       << "</text>\n";
  }
}

}  // namespace

std::string line_plot_svg(const std::vector<Band>& bands, const PlotText& text) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& b : bands) {
    if (b.x.size() != b.mean.size() || b.err.size() != b.mean.size()) {
      throw ContractError("line_plot_svg: series '" + b.label + "' has mismatched lengths");
    }
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      x0 = std::min(x0, b.x[i]);
      x1 = std::max(x1, b.x[i]);
      y0 = std::min(y0, b.mean[i] - b.err[i]);
      y1 = std::max(y1, b.mean[i] + b.err[i]);
    }
  }
  if (x1 - x0 < 1e-12 || !std::isfinite(x0)) {
    x0 = std::isfinite(x0) ? x0 - 1.0 : 0.0;
    x1 = std::isfinite(x1) ? x1 + 1.0 : 1.0;
  }
  widen(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::ostringstream os;
  header(os, text);
  axes(os, f, true);
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < bands.size(); ++k) {
    const Band& b = bands[k];
    labels.push_back(b.label);
    if (b.x.empty()) continue;
    os << "<polygon fill=\"" << color(k) << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < b.x.size(); ++i) os << fmt(f.px(b.x[i])) << "," << fmt(f.py(b.mean[i] + b.err[i])) << " ";
    for (std::size_t i = b.x.size(); i-- > 0;) os << fmt(f.px(b.x[i])) << "," << fmt(f.py(b.mean[i] - b.err[i])) << " ";
    os << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"" << color(k) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < b.x.size(); ++i) os << fmt(f.px(b.x[i])) << "," << fmt(f.py(b.mean[i])) << " ";
    os << "\"/>\n";
  }
  legend(os, labels);
  os << "</svg>\n";
  return os.str();
}

std::string bar_plot_svg(const std::vector<Bar>& bars, const PlotText& text) {
  std::vector<std::string> groups, labels;
  double y0 = 0.0, y1 = 0.0;
  for (const auto& b : bars) {
    if (std::find(groups.begin(), groups.end(), b.group) == groups.end()) groups.push_back(b.group);
    if (std::find(labels.begin(), labels.end(), b.label) == labels.end()) labels.push_back(b.label);
    y0 = std::min(y0, b.value - b.err);
    y1 = std::max(y1, b.value + b.err);
  }
  widen(y0, y1);
  const Frame f{0.0, static_cast<double>(std::max<std::size_t>(groups.size(), 1)), y0, y1};
  std::ostringstream os;
  header(os, text);
  axes(os, f, false);
  os << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(f.py(0.0)) << "\" x2=\"" << fmt(kWidth - kRight) << "\" y2=\""
     << fmt(f.py(0.0)) << "\" stroke=\"#999\"/>\n";
  const double slot = 0.8 / static_cast<double>(std::max<std::size_t>(labels.size(), 1));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    os << "<text x=\"" << fmt(f.px(g + 0.5)) << "\" y=\"" << fmt(kHeight - kBottom + 16) << "\" text-anchor=\"middle\">"
       << escape(groups[g]) << "</text>\n";
  }
  for (const auto& b : bars) {
    const auto g = static_cast<double>(std::find(groups.begin(), groups.end(), b.group) - groups.begin());
    const auto k = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), b.label) - labels.begin());
    const double xa = f.px(g + 0.1 + slot * static_cast<double>(k));
    const double xb = f.px(g + 0.1 + slot * static_cast<double>(k + 1));
    const double top = f.py(std::max(b.value, 0.0)), bottom = f.py(std::min(b.value, 0.0));
    os << "<rect x=\"" << fmt(xa) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(xb - xa) << "\" height=\""
       << fmt(bottom - top) << "\" fill=\"" << color(k) << "\"/>\n";
    const double xm = 0.5 * (xa + xb);
    os << "<line x1=\"" << fmt(xm) << "\" y1=\"" << fmt(f.py(b.value - b.err)) << "\" x2=\"" << fmt(xm) << "\" y2=\""
       << fmt(f.py(b.value + b.err)) << "\" stroke=\"black\"/>\n";
  }
  legend(os, labels);
  os << "</svg>\n";
  return os.str();
}

std::vector<Band> learning_curves(const std::vector<std::vector<Json>>& logs) {
  // variant -> update -> per-seed values
  std::map<std::string, std::map<int, std::vector<double>>> grouped;
  std::vector<std::string> order;
  for (const auto& log : logs) {
    for (const auto& rec : log) {
      const std::string v = rec.at("variant").get<std::string>();
      if (std::find(order.begin(), order.end(), v) == order.end()) order.push_back(v);
      double sum = 0.0;
      int count = 0;
      for (const auto& item : rec.at("returns").items()) {
        sum += item.value().get<double>();
        ++count;
      }
      if (count > 0) grouped[v][rec.at("update").get<int>()].push_back(sum / count);
    }
  }
  std::vector<Band> out;
  for (const auto& v : order) {
    Band b;
    b.label = v;
    for (const auto& [update, values] : grouped[v]) {
      b.x.push_back(update);
      b.mean.push_back(mean(values));
      b.err.push_back(std_error(values));
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace metacpr
