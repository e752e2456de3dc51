#include "coevo/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "coevo/io.hpp"

namespace fs = std::filesystem;

namespace coevo {
namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series,
                           std::optional<double> baseline) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.label + "': x/y length mismatch");
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y)
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (baseline) y0 = std::min(y0, *baseline), y1 = std::max(y1, *baseline);
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << escape(title) << "</text>\n"
      << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(py(yv) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(yv) << "</text>\n"
        << "<text x=\"" << num(px(xv)) << "\" y=\"" << kHeight - kBottom + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(xv) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";
  if (baseline) {
    svg << "<line class=\"baseline\" x1=\"" << kLeft << "\" y1=\"" << num(py(*baseline)) << "\" x2=\""
        << kLeft + pw << "\" y2=\"" << num(py(*baseline))
        << "\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kColors[i % std::size(kColors)];
    svg << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < s.x.size(); ++j) {
      if (!std::isfinite(s.y[j])) continue;
      svg << num(px(s.x[j])) << ',' << num(py(s.y[j])) << ' ';
    }
    svg << "\"/>\n"
        << "<text x=\"" << kLeft + 8 << "\" y=\"" << kTop + 16 + 14 * i << "\" fill=\"" << color
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<fs::path> emit_plots(const std::vector<PlotInput>& inputs, const fs::path& out_dir) {
  if (inputs.empty()) throw std::invalid_argument("emit_plots: no metrics files");
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  std::vector<Series> shift;
  std::optional<double> baseline;
  for (const auto& in : inputs) {
    const auto rows = read_metrics(in.metrics);
    if (rows.empty()) throw std::invalid_argument("emit_plots: " + in.metrics.string() + " has no rows");
    std::map<std::pair<std::string, std::string>, Series> by_metric;
    for (const auto& r : rows) {
      for (const auto& [name, v] : r.values) {
        Series& s = by_metric[{r.kind, name}];
        s.label = in.label;
        s.x.push_back(static_cast<double>(r.step));
        s.y.push_back(v);
      }
      if (r.kind == "shift_probe" && r.values.count("baseline_kl")) baseline = r.values.at("baseline_kl");
    }
    for (const auto& [key, s] : by_metric) {
      const std::string stem = in.label + "." + key.first + "." + key.second;
      std::ostringstream csv;
      csv << "step,value\n";
      csv.precision(17);
      for (std::size_t i = 0; i < s.x.size(); ++i) csv << static_cast<long>(s.x[i]) << ',' << s.y[i] << '\n';
      write_text(out_dir / (stem + ".csv"), csv.str());
      write_text(out_dir / (stem + ".svg"), line_chart_svg(in.label + ": " + key.second, {s}));
      written.push_back(out_dir / (stem + ".csv"));
      written.push_back(out_dir / (stem + ".svg"));
    }
    auto it = by_metric.find({"shift_probe", "kl_nats"});
    if (it != by_metric.end()) shift.push_back(it->second);
  }
  if (!shift.empty()) {
    write_text(out_dir / "shift.svg", line_chart_svg("token KL to ground truth (nats)", shift, baseline));
    written.push_back(out_dir / "shift.svg");
  }
  return written;
}

}  // namespace coevo
