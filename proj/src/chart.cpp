#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "layerscope/error.hpp"
#include "layerscope/report.hpp"

namespace layerscope {
namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(double width, double height, std::string_view title) {
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(width) << "\" height=\""
    << num(height) << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n"
    << "<title>" << escape(title) << "</title>\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"#ffffff\"/>\n";
  return s.str();
}

// Blue for low values through red for high ones; t in [0, 1].
std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255.0 * t));
  const int g = static_cast<int>(std::lround(64.0 + 96.0 * (1.0 - std::abs(2.0 * t - 1.0))));
  const int b = 255 - r;
  return "rgb(" + std::to_string(r) + "," + std::to_string(g) + "," + std::to_string(b) + ")";
}

}  // namespace

std::string render_chart(const Report& r) {
  if (r.layers.empty()) throw Error(ErrorCode::InvalidArgument, "cannot chart a report without layers");
  constexpr double left = 56, top = 36, plot_h = 220, slot = 36, bottom_pad = 90;
  const double n = static_cast<double>(r.layers.size());
  const double width = left + slot * n + 150;
  const double height = top + plot_h + bottom_pad;
  const double base = top + plot_h;
  const auto y_of = [&](double v) { return base - plot_h * std::clamp(v, 0.0, 1.0); };
  const auto x_of = [&](std::size_t i) { return left + slot * static_cast<double>(i); };

  std::ostringstream s;
  s << header(width, height, r.architecture + " layer saturation and probe accuracy");
  s << "<text x=\"" << num(left) << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">"
    << escape(r.architecture) << (r.input_size ? " @ " + std::to_string(*r.input_size) + " px" : "") << "</text>\n";

  if (r.tail.tail) {
    const double x0 = x_of(static_cast<std::size_t>(r.tail.tail->begin));
    const double x1 = x_of(static_cast<std::size_t>(r.tail.tail->end));
    s << "<rect class=\"tail-region\" x=\"" << num(x0) << "\" y=\"" << num(top) << "\" width=\"" << num(x1 - x0)
      << "\" height=\"" << num(plot_h) << "\" fill=\"#999999\" fill-opacity=\"0.25\"/>\n";
  }

  // axes and gridlines
  s << "<g stroke=\"#444444\" stroke-width=\"1\">\n"
    << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\"" << num(base) << "\"/>\n"
    << "<line x1=\"" << num(left) << "\" y1=\"" << num(base) << "\" x2=\"" << num(x_of(r.layers.size())) << "\" y2=\""
    << num(base) << "\"/>\n</g>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick / 4.0;
    s << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y_of(v) + 4)
      << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }

  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const LayerReport& l = r.layers[i];
    if (l.saturation) {
      s << "<rect class=\"sat-bar\" x=\"" << num(x_of(i) + 6) << "\" y=\"" << num(y_of(*l.saturation))
        << "\" width=\"" << num(slot - 12) << "\" height=\"" << num(base - y_of(*l.saturation))
        << "\" fill=\"#4c78a8\"><title>" << escape(l.layer_name) << " saturation " << num(*l.saturation)
        << "</title></rect>\n";
    }
    const double cx = x_of(i) + slot / 2;
    s << "<text x=\"" << num(cx) << "\" y=\"" << num(base + 12) << "\" font-family=\"sans-serif\" font-size=\"10\" "
      << "text-anchor=\"end\" transform=\"rotate(-60 " << num(cx) << ' ' << num(base + 12) << ")\">"
      << escape(l.layer_name) << "</text>\n";
  }

  std::string points;
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    if (!r.layers[i].probe_accuracy) continue;
    if (!points.empty()) points += ' ';
    points += num(x_of(i) + slot / 2) + "," + num(y_of(*r.layers[i].probe_accuracy));
  }
  if (!points.empty()) {
    s << "<polyline class=\"probe-line\" points=\"" << points
      << "\" fill=\"none\" stroke=\"#e45756\" stroke-width=\"2\"/>\n";
  }
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const LayerReport& l = r.layers[i];
    if (!l.probe_accuracy) continue;
    s << "<circle class=\"probe-point\" cx=\"" << num(x_of(i) + slot / 2) << "\" cy=\"" << num(y_of(*l.probe_accuracy))
      << "\" r=\"3.5\" fill=\"#e45756\"><title>" << escape(l.layer_name) << " probe accuracy "
      << num(*l.probe_accuracy) << "</title></circle>\n";
  }

  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    if (!r.layers[i].is_border) continue;
    s << "<line class=\"border-marker\" x1=\"" << num(x_of(i)) << "\" y1=\"" << num(top - 6) << "\" x2=\""
      << num(x_of(i)) << "\" y2=\"" << num(base) << "\" stroke=\"#222222\" stroke-width=\"2\" "
      << "stroke-dasharray=\"5,3\"/>\n";
  }

  const double lx = x_of(r.layers.size()) + 16;
  s << "<g font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect x=\"" << num(lx) << "\" y=\"" << num(top) << "\" width=\"12\" height=\"12\" fill=\"#4c78a8\"/>"
    << "<text x=\"" << num(lx + 18) << "\" y=\"" << num(top + 10) << "\">saturation</text>\n"
    << "<line x1=\"" << num(lx) << "\" y1=\"" << num(top + 26) << "\" x2=\"" << num(lx + 12) << "\" y2=\""
    << num(top + 26) << "\" stroke=\"#e45756\" stroke-width=\"2\"/>"
    << "<text x=\"" << num(lx + 18) << "\" y=\"" << num(top + 30) << "\">probe accuracy</text>\n"
    << "<line x1=\"" << num(lx + 6) << "\" y1=\"" << num(top + 40) << "\" x2=\"" << num(lx + 6) << "\" y2=\""
    << num(top + 54) << "\" stroke=\"#222222\" stroke-width=\"2\" stroke-dasharray=\"5,3\"/>"
    << "<text x=\"" << num(lx + 18) << "\" y=\"" << num(top + 50) << "\">border layer</text>\n"
    << "<rect x=\"" << num(lx) << "\" y=\"" << num(top + 62) << "\" width=\"12\" height=\"12\" fill=\"#999999\" "
    << "fill-opacity=\"0.25\"/><text x=\"" << num(lx + 18) << "\" y=\"" << num(top + 72) << "\">tail</text>\n"
    << "</g>\n</svg>\n";
  return s.str();
}

std::string render_heatmap(const Heatmap& h, double model_accuracy) {
  if (h.height < 1 || h.width < 1 || h.accuracy.size() != static_cast<std::size_t>(h.height) * h.width) {
    throw Error(ErrorCode::InvalidArgument, "heatmap for '" + h.layer_name + "' has no cells");
  }
  std::vector<double> rel(h.accuracy.size());
  for (std::size_t i = 0; i < rel.size(); ++i) {
    rel[i] = model_accuracy > 0.0 ? h.accuracy[i] / model_accuracy : h.accuracy[i];
  }
  const auto [lo_it, hi_it] = std::minmax_element(rel.begin(), rel.end());
  const double lo = *lo_it, hi = *hi_it;
  const auto t_of = [&](double v) { return hi > lo ? (v - lo) / (hi - lo) : 0.5; };

  constexpr double cell = 28, left = 20, top = 40;
  const double grid_w = cell * h.width;
  const double width = left + grid_w + 110;
  const double height = std::max(top + cell * h.height + 20, top + 150);
  std::ostringstream s;
  s << header(width, height, h.layer_name + " relative probe accuracy per position");
  s << "<text x=\"" << num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"13\">"
    << escape(h.layer_name) << " relative accuracy</text>\n";
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      const double v = rel[static_cast<std::size_t>(y) * h.width + x];
      s << "<rect class=\"heat-cell\" x=\"" << num(left + cell * x) << "\" y=\"" << num(top + cell * y)
        << "\" width=\"" << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << heat_color(t_of(v))
        << "\" data-value=\"" << nlohmann::json(v).dump() << "\"><title>(" << y << ", " << x << ") "
        << num(v) << "</title></rect>\n";
    }
  }
  const double lx = left + grid_w + 20;
  s << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int i = 0; i < 5; ++i) {
    const double t = 1.0 - i / 4.0;
    s << "<rect x=\"" << num(lx) << "\" y=\"" << num(top + 22.0 * i) << "\" width=\"16\" height=\"20\" fill=\""
      << heat_color(t) << "\"/><text x=\"" << num(lx + 22) << "\" y=\"" << num(top + 22.0 * i + 14) << "\">"
      << num(lo + t * (hi - lo)) << "</text>\n";
  }
  s << "</g>\n</svg>\n";
  return s.str();
}

}  // namespace layerscope
